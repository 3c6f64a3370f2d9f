//! Checkpoint container.
//!
//! ```text
//! offset  size      field
//! 0       8         magic  "SPECPOST"
//! 8       4         format version, u32 LE (currently 1)
//! 12      8         header length H, u64 LE
//! 20      H         header, UTF-8 JSON (model configs, optimiser settings, caller metadata)
//! 20+H    4         tensor count N, u32 LE
//! ...     N ×       name length u32 LE, name UTF-8, dims 4 × u32 LE (NCHW),
//!                   data as f64 LE, row-major
//! ```
//!
//! Tensor names are prefixed `g/`, `d{k}/`, `opt_g/{m,v}/`, `opt_d{k}/{m,v}/`.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DiscriminatorBank, DiscriminatorConfig, GeneratorConfig, GeneratorNet};
use crate::autograd::{Adam, AdamConfig, AdamState, ParamSet, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SPECPOST";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Optimiser state for the generator and each discriminator scale.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub generator: Adam,
    pub discriminators: Vec<Adam>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator: GeneratorNet,
    pub bank: DiscriminatorBank,
    pub optimizer: Option<OptimizerState>,
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    optimizer: Option<OptHeader>,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct OptHeader {
    config: AdamConfig,
    generator_step: u64,
    discriminator_steps: Vec<u64>,
}

fn push_params(out: &mut Vec<(String, Tensor)>, prefix: &str, ps: &ParamSet) {
    for (n, t) in ps.names.iter().zip(&ps.tensors) {
        out.push((format!("{prefix}{n}"), t.clone()));
    }
}

fn push_adam(out: &mut Vec<(String, Tensor)>, prefix: &str, ps: &ParamSet, st: &AdamState) {
    for (i, n) in ps.names.iter().enumerate() {
        out.push((format!("{prefix}m/{n}"), st.m[i].clone()));
        out.push((format!("{prefix}v/{n}"), st.v[i].clone()));
    }
}

pub fn save_checkpoint(
    path: &Path,
    g: &GeneratorNet,
    bank: &DiscriminatorBank,
    opt: Option<&OptimizerState>,
    meta: &serde_json::Value,
) -> Result<()> {
    let header = Header {
        generator: g.config.clone(),
        discriminator: bank.config.clone(),
        optimizer: opt.map(|o| OptHeader {
            config: o.generator.config,
            generator_step: o.generator.state.step,
            discriminator_steps: o.discriminators.iter().map(|d| d.state.step).collect(),
        }),
        meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");

    let mut tensors = Vec::new();
    push_params(&mut tensors, "g/", &g.params);
    for (k, d) in bank.scales.iter().enumerate() {
        push_params(&mut tensors, &format!("d{k}/"), &d.params);
    }
    if let Some(o) = opt {
        push_adam(&mut tensors, "opt_g/", &g.params, &o.generator.state);
        for (k, (d, a)) in bank.scales.iter().zip(&o.discriminators).enumerate() {
            push_adam(&mut tensors, &format!("opt_d{k}/"), &d.params, &a.state);
        }
    }

    let tmp = path.with_extension("tmp");
    let io = |e| Error::io(&tmp, e);
    {
        let file = fs::File::create(&tmp).map_err(io)?;
        let mut w = BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, t) in &tensors {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            for d in t.shape {
                w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn fill(ps: &mut ParamSet, prefix: &str, table: &mut std::collections::HashMap<String, Tensor>) -> Result<()> {
    for (n, t) in ps.names.iter().zip(ps.tensors.iter_mut()) {
        let key = format!("{prefix}{n}");
        let v = table
            .remove(&key)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {key}")))?;
        if v.shape != t.shape {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {key} has shape {:?}, model expects {:?}",
                v.shape, t.shape
            )));
        }
        *t = v;
    }
    Ok(())
}

fn fill_adam(
    ps: &ParamSet,
    prefix: &str,
    config: AdamConfig,
    step: u64,
    table: &mut std::collections::HashMap<String, Tensor>,
) -> Result<Adam> {
    let mut m = ParamSet {
        names: ps.names.clone(),
        tensors: ps.tensors.clone(),
    };
    let mut v = m.clone();
    fill(&mut m, &format!("{prefix}m/"), table)?;
    fill(&mut v, &format!("{prefix}v/"), table)?;
    Ok(Adam {
        config,
        state: AdamState {
            step,
            m: m.tensors,
            v: v.tensors,
        },
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { buf: &bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let hlen = c.u64()? as usize;
    let header: Header = serde_json::from_slice(c.take(hlen)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    let count = c.u32()? as usize;
    let mut table = std::collections::HashMap::with_capacity(count);
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        let name = String::from_utf8(c.take(nlen)?.to_vec())
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let mut shape = [0usize; 4];
        for d in shape.iter_mut() {
            *d = c.u32()? as usize;
        }
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        table.insert(name, Tensor::from_vec(shape, data));
    }
    if c.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }

    let mut generator = GeneratorNet::new(header.generator, 0)?;
    fill(&mut generator.params, "g/", &mut table)?;
    let mut bank = DiscriminatorBank::new(header.discriminator, 0)?;
    for (k, d) in bank.scales.iter_mut().enumerate() {
        fill(&mut d.params, &format!("d{k}/"), &mut table)?;
    }
    let optimizer = match header.optimizer {
        None => None,
        Some(h) => {
            if h.discriminator_steps.len() != bank.scales.len() {
                return Err(Error::CorruptCheckpoint("optimiser scale count".into()));
            }
            let g_opt = fill_adam(&generator.params, "opt_g/", h.config, h.generator_step, &mut table)?;
            let d_opts = bank
                .scales
                .iter()
                .enumerate()
                .map(|(k, d)| {
                    fill_adam(&d.params, &format!("opt_d{k}/"), h.config, h.discriminator_steps[k], &mut table)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(OptimizerState {
                generator: g_opt,
                discriminators: d_opts,
            })
        }
    };
    if let Some(extra) = table.keys().next() {
        return Err(Error::CorruptCheckpoint(format!("unexpected tensor {extra}")));
    }
    Ok(Checkpoint {
        generator,
        bank,
        optimizer,
        meta: header.meta,
    })
}
