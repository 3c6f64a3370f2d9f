//! Objective evaluation: image-domain SSIM and waveform STOI.
//!
//! For every vocoder the STOI reference is the same vocoder applied to the
//! original mel, so the "original" condition scores 1 by construction.
//! Griffin-Lim is always used; an external vocoder can be added through a
//! shell command template containing `{mel_in}` and `{wav_out}`.

mod stoi;

pub use stoi::{resample, stoi, STOI_RATE};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::audio::{read_wav, Waveform};
use crate::dataio::{pair_path, read_pair, write_mel, CorpusManifest, PairedExample, Split};
use crate::dsp::{griffin_lim, mel_to_linear_with, phase_seed, MelBasis, MelSpectrogram};
use crate::error::{Error, Result};
use crate::imaging::{image_to_mel, mel_to_image, SpectrogramImage};
use crate::losses::{ssim_mean, LossWeights};
use crate::model::{generator_forward, image_to_tensor, GeneratorNet};
use crate::par;
use crate::training::{load_model, TrainConfig};

/// Mean SSIM between two images, with the training constants.
pub fn ssim_metric(a: &SpectrogramImage, b: &SpectrogramImage, w: &LossWeights) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    ssim_mean(&image_to_tensor(a), &image_to_tensor(b), w)
}

/// Griffin-Lim synthesis of a mel with the clip's fixed phase seed.
pub fn synthesize_gl(m: &MelSpectrogram, basis: &MelBasis, clip_id: &str) -> Result<Waveform> {
    let lin = mel_to_linear_with(m, basis);
    griffin_lim(&lin, m.params.griffin_lim_iters, phase_seed(clip_id))
}

/// Run an external vocoder: `{mel_in}` is replaced by a `.mel` record path,
/// `{wav_out}` by the path the command must write.
pub fn run_external_vocoder(template: &str, m: &MelSpectrogram, work: &Path, stem: &str) -> Result<Waveform> {
    let mel_in = work.join(format!("{stem}.mel"));
    let wav_out = work.join(format!("{stem}.wav"));
    write_mel(&mel_in, m)?;
    let cmd = template
        .replace("{mel_in}", &mel_in.display().to_string())
        .replace("{wav_out}", &wav_out.display().to_string());
    let out = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .output()
        .map_err(|e| Error::External(format!("{cmd}: {e}")))?;
    if !out.status.success() {
        return Err(Error::External(format!(
            "{cmd}: {} {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    if !wav_out.is_file() {
        return Err(Error::External(format!("{cmd}: wrote no {}", wav_out.display())));
    }
    read_wav(&wav_out)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Compute the Griffin-Lim STOI columns.
    pub stoi: bool,
    pub external_vocoder: Option<String>,
    /// Scratch directory for external vocoder files.
    pub work_dir: Option<PathBuf>,
}

/// Scores of one condition against the original.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Triple {
    pub coarse: f64,
    pub pred: f64,
    pub original: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub clip_id: String,
    pub ssim: Option<Triple>,
    pub stoi_gl: Option<Triple>,
    pub stoi_ext: Option<Triple>,
    /// Problems that left columns empty.
    pub errors: Vec<String>,
}

impl EvalRow {
    fn failed(clip_id: &str, e: &Error) -> Self {
        Self {
            clip_id: clip_id.to_string(),
            ssim: None,
            stoi_gl: None,
            stoi_ext: None,
            errors: vec![e.to_string()],
        }
    }

    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub dsp_fingerprint: String,
    pub model_fingerprint: String,
    pub external: bool,
}

fn mean_of(rows: &[EvalRow], f: impl Fn(&EvalRow) -> Option<Triple>) -> Option<Triple> {
    let vals: Vec<Triple> = rows.iter().filter_map(f).collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    Some(Triple {
        coarse: vals.iter().map(|t| t.coarse).sum::<f64>() / n,
        pred: vals.iter().map(|t| t.pred).sum::<f64>() / n,
        original: vals.iter().map(|t| t.original).sum::<f64>() / n,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(EvalRow::is_complete)
    }

    pub fn mean_ssim(&self) -> Option<Triple> {
        mean_of(&self.rows, |r| r.ssim)
    }

    pub fn mean_stoi_gl(&self) -> Option<Triple> {
        mean_of(&self.rows, |r| r.stoi_gl)
    }

    pub fn mean_stoi_ext(&self) -> Option<Triple> {
        mean_of(&self.rows, |r| r.stoi_ext)
    }

    /// Per-clip table, tab separated, `NA` for missing values.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "clip_id\tssim_coarse\tssim_pred\tssim_original\tstoi_gl_coarse\tstoi_gl_pred\tstoi_gl_original\t\
             stoi_ext_coarse\tstoi_ext_pred\tstoi_ext_original\tstatus\n",
        );
        for r in &self.rows {
            let t = |x: Option<Triple>| {
                [
                    cell(x.map(|v| v.coarse)),
                    cell(x.map(|v| v.pred)),
                    cell(x.map(|v| v.original)),
                ]
                .join("\t")
            };
            let status = if r.errors.is_empty() {
                "ok".to_string()
            } else {
                format!("incomplete: {}", r.errors.join("; ").replace(['\t', '\n'], " "))
            };
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{status}",
                r.clip_id,
                t(r.ssim),
                t(r.stoi_gl),
                t(r.stoi_ext)
            );
        }
        s
    }

    /// Corpus means laid out as condition × measure tables.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dsp\t{}", self.dsp_fingerprint);
        let _ = writeln!(s, "model\t{}", self.model_fingerprint);
        let complete = self.rows.iter().filter(|r| r.is_complete()).count();
        let _ = writeln!(s, "clips\t{} ({} complete)", self.rows.len(), complete);
        let ss = self.mean_ssim();
        let _ = writeln!(s, "\nmel-spectrogram\tssim");
        for (name, f) in CONDITIONS {
            let _ = writeln!(s, "{name}\t{}", cell(ss.map(f)));
        }
        let (gl, ext) = (self.mean_stoi_gl(), self.mean_stoi_ext());
        let _ = writeln!(s, "\nmel-spectrogram\tstoi_griffin_lim\tstoi_external");
        for (name, f) in CONDITIONS {
            let _ = writeln!(s, "{name}\t{}\t{}", cell(gl.map(f)), cell(ext.map(f)));
        }
        s
    }
}

type Pick = fn(Triple) -> f64;
const CONDITIONS: [(&str, Pick); 3] = [
    ("coarse", |t| t.coarse),
    ("predicted", |t| t.pred),
    ("original", |t| t.original),
];

/// Evaluate one pair with an already loaded generator.
pub fn evaluate_pair(
    pair: &PairedExample,
    generator: &GeneratorNet,
    cfg: &TrainConfig,
    basis: &MelBasis,
    opts: &EvalOptions,
) -> EvalRow {
    let id = &pair.clip_id;
    let coarse_img = match mel_to_image(&pair.coarse, &cfg.codec) {
        Ok(i) => i,
        Err(e) => return EvalRow::failed(id, &e),
    };
    let orig_img = match mel_to_image(&pair.original, &cfg.codec) {
        Ok(i) => i,
        Err(e) => return EvalRow::failed(id, &e),
    };
    let pred_img = match generator_forward(generator, &coarse_img) {
        Ok(i) => i,
        Err(e) => return EvalRow::failed(id, &e),
    };
    let mut row = EvalRow {
        clip_id: id.clone(),
        ssim: None,
        stoi_gl: None,
        stoi_ext: None,
        errors: Vec::new(),
    };
    let ssim = (|| -> Result<Triple> {
        Ok(Triple {
            coarse: ssim_metric(&coarse_img, &orig_img, &cfg.loss)?,
            pred: ssim_metric(&pred_img, &orig_img, &cfg.loss)?,
            original: ssim_metric(&orig_img, &orig_img, &cfg.loss)?,
        })
    })();
    match ssim {
        Ok(t) => row.ssim = Some(t),
        Err(e) => row.errors.push(format!("ssim: {e}")),
    }
    if !opts.stoi && opts.external_vocoder.is_none() {
        return row;
    }
    let pred_mel = match image_to_mel(&pred_img) {
        Ok(m) => m,
        Err(e) => {
            row.errors.push(format!("decode prediction: {e}"));
            return row;
        }
    };
    let mels = [&pair.coarse, &pred_mel, &pair.original];
    let score = |w: &[Waveform]| -> Result<Triple> {
        Ok(Triple {
            coarse: stoi(&w[2], &w[0])?,
            pred: stoi(&w[2], &w[1])?,
            original: stoi(&w[2], &w[2])?,
        })
    };
    if opts.stoi {
        let r = mels
            .iter()
            .map(|m| synthesize_gl(m, basis, id))
            .collect::<Result<Vec<_>>>()
            .and_then(|w| score(&w));
        match r {
            Ok(t) => row.stoi_gl = Some(t),
            Err(e) => row.errors.push(format!("stoi (griffin-lim): {e}")),
        }
    }
    if let Some(template) = &opts.external_vocoder {
        let work = opts.work_dir.clone().unwrap_or_else(std::env::temp_dir);
        let r = ["coarse", "pred", "original"]
            .iter()
            .zip(mels)
            .map(|(tag, m)| run_external_vocoder(template, m, &work, &format!("{id}.{tag}")))
            .collect::<Result<Vec<_>>>()
            .and_then(|w| score(&w));
        match r {
            Ok(t) => row.stoi_ext = Some(t),
            Err(e) => row.errors.push(format!("stoi (external): {e}")),
        }
    }
    row
}

fn model_fingerprint(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    match std::fs::read(path) {
        Ok(b) => Sha256::digest(&b)[..8].iter().map(|x| format!("{x:02x}")).collect(),
        Err(_) => "unknown".into(),
    }
}

/// Evaluate every test-split clip of `manifest` with the generator stored in
/// `checkpoint`. Clips are processed in parallel; per-clip problems are
/// recorded in the row rather than aborting.
pub fn evaluate_corpus(
    manifest: &CorpusManifest,
    pairs_dir: &Path,
    checkpoint: &Path,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let (generator, cfg) = load_model(checkpoint)?;
    let entries: Vec<_> = manifest.split(Split::Test).collect();
    if entries.is_empty() {
        return Err(Error::Missing("test split is empty".into()));
    }
    if let Some(w) = &opts.work_dir {
        std::fs::create_dir_all(w).map_err(|e| Error::io(w, e))?;
    }
    if entries.iter().all(|e| !pair_path(pairs_dir, &e.clip_id).is_file()) {
        return Err(Error::Missing(format!("no pair records for the test split in {}", pairs_dir.display())));
    }
    let rows = par::map_slice(&entries, |e| {
        let pair = match read_pair(&pair_path(pairs_dir, &e.clip_id)) {
            Ok(p) => p,
            Err(err) => return EvalRow::failed(&e.clip_id, &err),
        };
        match MelBasis::new(&pair.original.params) {
            Ok(b) => evaluate_pair(&pair, &generator, &cfg, &b, opts),
            Err(err) => EvalRow::failed(&e.clip_id, &err),
        }
    });
    Ok(EvalReport {
        rows,
        dsp_fingerprint: manifest.created_with.clone(),
        model_fingerprint: model_fingerprint(checkpoint),
        external: opts.external_vocoder.is_some(),
    })
}
