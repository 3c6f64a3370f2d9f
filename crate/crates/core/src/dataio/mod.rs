//! Corpus manifests and on-disk `<coarse, original>` mel pairs.

mod manifest;
mod records;

pub use manifest::{build_manifest, CorpusManifest, ManifestEntry, Split};
pub use records::{read_mel, read_pair, write_mel, write_pair, PairedExample, MEL_MAGIC, PAIR_MAGIC};

use std::fs;
use std::path::{Path, PathBuf};

use crate::audio::read_wav;
use crate::dsp::{coarse_from_mel, phase_seed, wav_to_mel_with, DspParams, MelBasis};
use crate::error::{Error, Result};
use crate::par;

pub const PAIR_EXT: &str = "melpair";

pub fn pair_path(dir: &Path, clip_id: &str) -> PathBuf {
    dir.join(format!("{clip_id}.{PAIR_EXT}"))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaterializeOptions {
    /// Trim leading/trailing audio quieter than this many dB below the peak.
    pub trim_db: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MaterializeSummary {
    pub written: usize,
    /// `(clip_id, reason)` for every clip that could not be processed.
    pub failures: Vec<(String, String)>,
}

impl MaterializeSummary {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Build the pair for one audio clip. The Griffin-Lim phase is seeded from
/// the clip id, so the result is reproducible bit for bit.
pub fn make_pair(clip_id: &str, path: &Path, basis: &MelBasis, opts: &MaterializeOptions) -> Result<PairedExample> {
    let p = &basis.params;
    let mut w = read_wav(path)?;
    if w.sample_rate != p.sample_rate {
        return Err(Error::format(
            path,
            format!("sample rate {} does not match parameters {}", w.sample_rate, p.sample_rate),
        ));
    }
    if let Some(db) = opts.trim_db {
        w = w.trim_silence(db, p.hop_length);
    }
    if w.is_empty() {
        return Err(Error::EmptyInput("clip audio"));
    }
    let original = wav_to_mel_with(&w, basis)?;
    let coarse = coarse_from_mel(&original, basis, phase_seed(clip_id))?;
    PairedExample::new(clip_id, coarse, original)
}

/// Write one pair record per manifest entry into `out_dir`. Clips are
/// processed in parallel; a failing clip is recorded and skipped.
pub fn materialize_pairs(
    manifest: &CorpusManifest,
    params: &DspParams,
    out_dir: &Path,
    opts: &MaterializeOptions,
) -> Result<MaterializeSummary> {
    params.validate()?;
    if params.sample_rate != manifest.sample_rate {
        return Err(Error::InvalidParam(format!(
            "parameters sample rate {} differs from corpus rate {}",
            params.sample_rate, manifest.sample_rate
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let basis = MelBasis::new(params)?;
    // Ok(Err(_)) is a per-clip failure; Err(_) means the output is unwritable.
    let results = par::map_slice(&manifest.entries, |e| {
        match make_pair(&e.clip_id, &manifest.audio_path(e), &basis, opts) {
            Ok(pair) => write_pair(&pair_path(out_dir, &e.clip_id), &pair).map(Ok),
            Err(err) => Ok(Err(err)),
        }
    });
    let mut summary = MaterializeSummary::default();
    for (e, r) in manifest.entries.iter().zip(results) {
        match r? {
            Ok(()) => summary.written += 1,
            Err(err) => summary.failures.push((e.clip_id.clone(), err.to_string())),
        }
    }
    Ok(summary)
}

/// Load the pair records of one split, in manifest order.
pub fn load_pairs(manifest: &CorpusManifest, pairs_dir: &Path, split: Split) -> Result<Vec<PairedExample>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    let loaded = par::map_slice(&entries, |e| {
        let path = pair_path(pairs_dir, &e.clip_id);
        if !path.is_file() {
            return Err(Error::Missing(format!("pair record {}", path.display())));
        }
        let p = read_pair(&path)?;
        if p.clip_id != e.clip_id {
            return Err(Error::format(&path, format!("holds clip {:?}", p.clip_id)));
        }
        Ok(p)
    });
    loaded.into_iter().collect()
}
