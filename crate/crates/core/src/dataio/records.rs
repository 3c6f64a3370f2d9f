//! Binary containers for mel matrices.
//!
//! Pair record (`.melpair`), all integers little-endian:
//!
//! ```text
//! offset  size   field
//! 0       8      magic "MELPAIR1"
//! 8       4      n_mels (u32)
//! 12      4      n_frames (u32)
//! 16      4      dtype code (u32), 1 = IEEE-754 binary32 little-endian
//! 20      4      clip id length I (u32)
//! 24      I      clip id, UTF-8
//! 24+I    4      parameter block length P (u32)
//! 28+I    P      DspParams as UTF-8 JSON
//! 28+I+P  4·M    coarse matrix, M = n_mels · n_frames, row-major (mel channel major)
//! ...     4·M    original matrix, same layout
//! ```
//!
//! Single-mel record (`.mel`) uses magic "MELSPEC1" and the same layout
//! without the clip id and with one matrix.

use std::fs;
use std::path::Path;

use crate::dsp::{DspParams, MelSpectrogram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const PAIR_MAGIC: &[u8; 8] = b"MELPAIR1";
pub const MEL_MAGIC: &[u8; 8] = b"MELSPEC1";
const DTYPE_F32_LE: u32 = 1;

/// A coarse mel and the original it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExample {
    pub clip_id: String,
    pub coarse: MelSpectrogram,
    pub original: MelSpectrogram,
}

impl PairedExample {
    pub fn new(clip_id: impl Into<String>, coarse: MelSpectrogram, original: MelSpectrogram) -> Result<Self> {
        if coarse.shape() != original.shape() {
            return Err(Error::Shape(format!(
                "coarse {:?} vs original {:?}",
                coarse.shape(),
                original.shape()
            )));
        }
        if coarse.params != original.params {
            return Err(Error::InvalidParam("coarse and original extraction parameters differ".into()));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            coarse,
            original,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_matrix(out: &mut Vec<u8>, m: &Matrix) {
    for v in &m.data {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn encode(magic: &[u8; 8], clip_id: Option<&str>, mels: &[&MelSpectrogram]) -> Vec<u8> {
    let (rows, cols) = mels[0].shape();
    let params = serde_json::to_vec(&mels[0].params).expect("params serialize");
    let mut out = Vec::with_capacity(64 + params.len() + mels.len() * rows * cols * 4);
    out.extend_from_slice(magic);
    put_u32(&mut out, rows);
    put_u32(&mut out, cols);
    put_u32(&mut out, DTYPE_F32_LE as usize);
    if let Some(id) = clip_id {
        put_u32(&mut out, id.len());
        out.extend_from_slice(id.as_bytes());
    }
    put_u32(&mut out, params.len());
    out.extend_from_slice(&params);
    for m in mels {
        put_matrix(&mut out, &m.values);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

struct Decoded {
    clip_id: Option<String>,
    mels: Vec<MelSpectrogram>,
}

fn decode(bytes: &[u8], magic: &[u8; 8], with_id: bool, count: usize) -> std::result::Result<Decoded, String> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != magic {
        return Err(format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)));
    }
    let rows = r.u32()?;
    let cols = r.u32()?;
    let dtype = r.u32()?;
    if dtype as u32 != DTYPE_F32_LE {
        return Err(format!("unsupported dtype code {dtype}"));
    }
    let clip_id = if with_id {
        let n = r.u32()?;
        Some(String::from_utf8(r.take(n)?.to_vec()).map_err(|_| "clip id is not UTF-8")?)
    } else {
        None
    };
    let n = r.u32()?;
    let params: DspParams = serde_json::from_slice(r.take(n)?).map_err(|e| format!("parameters: {e}"))?;
    let mut mels = Vec::with_capacity(count);
    for _ in 0..count {
        let raw = r.take(rows * cols * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let m = MelSpectrogram::new(Matrix::from_vec(rows, cols, data), params.clone()).map_err(|e| e.to_string())?;
        // single-precision storage may round just below the floor
        mels.push(m.clamp_floor());
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(Decoded { clip_id, mels })
}

pub fn write_pair(path: &Path, p: &PairedExample) -> Result<()> {
    let bytes = encode(PAIR_MAGIC, Some(&p.clip_id), &[&p.coarse, &p.original]);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pair(path: &Path) -> Result<PairedExample> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let d = decode(&bytes, PAIR_MAGIC, true, 2).map_err(|r| Error::format(path, r))?;
    let mut it = d.mels.into_iter();
    let coarse = it.next().expect("two matrices");
    let original = it.next().expect("two matrices");
    PairedExample::new(d.clip_id.expect("with id"), coarse, original)
}

pub fn write_mel(path: &Path, m: &MelSpectrogram) -> Result<()> {
    fs::write(path, encode(MEL_MAGIC, None, &[m])).map_err(|e| Error::io(path, e))
}

/// Read a `.mel` record, or the coarse half of a `.melpair` record.
pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(PAIR_MAGIC) {
        return read_pair(path).map(|p| p.coarse);
    }
    let d = decode(&bytes, MEL_MAGIC, false, 1).map_err(|r| Error::format(path, r))?;
    Ok(d.mels.into_iter().next().expect("one matrix"))
}
