//! Run configuration: built-in defaults, then an optional TOML file, then
//! flags given explicitly on the command line.

use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::{Deserialize, Serialize};

use specpost::dsp::{
    DspParams, MelNorm, DEFAULT_GRIFFIN_LIM_ITERS, DEFAULT_HOP_LENGTH, DEFAULT_LOG_FLOOR, DEFAULT_N_FFT,
    DEFAULT_N_MELS, DEFAULT_WIN_LENGTH,
};
use specpost::training::TrainConfig;

use crate::Failure;

/// Extraction parameters; the sample rate always comes from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Nyquist when unset.
    pub fmax: Option<f64>,
    pub griffin_lim_iters: usize,
    pub log_floor: f64,
    pub mel_norm: MelNorm,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            n_fft: DEFAULT_N_FFT,
            win_length: DEFAULT_WIN_LENGTH,
            hop_length: DEFAULT_HOP_LENGTH,
            n_mels: DEFAULT_N_MELS,
            fmin: 0.0,
            fmax: None,
            griffin_lim_iters: DEFAULT_GRIFFIN_LIM_ITERS,
            log_floor: DEFAULT_LOG_FLOOR,
            mel_norm: MelNorm::Slaney,
        }
    }
}

impl DspConfig {
    pub fn resolve(&self, sample_rate: u32) -> DspParams {
        DspParams {
            sample_rate,
            n_fft: self.n_fft,
            win_length: self.win_length,
            hop_length: self.hop_length,
            n_mels: self.n_mels,
            fmin: self.fmin,
            fmax: self.fmax.unwrap_or(sample_rate as f64 / 2.0),
            griffin_lim_iters: self.griffin_lim_iters,
            log_floor: self.log_floor,
            mel_norm: self.mel_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub seed: u64,
    pub trim_db: Option<f64>,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            train_count: 13000,
            test_count: 100,
            seed: 0,
            trim_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub stoi: bool,
    pub external_vocoder: Option<String>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            stoi: true,
            external_vocoder: None,
        }
    }
}

/// Everything a config file may set. Each command reads its own sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dsp: DspConfig,
    pub prepare: PrepareConfig,
    pub train: TrainConfig,
    pub evaluate: EvaluateConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// True when `id` was given on the command line rather than defaulted.
pub fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Copy each flag value over the config field when the flag was given.
#[macro_export]
macro_rules! overlay {
    ($m:expr; $($id:literal: $dst:expr => $val:expr;)*) => {
        $(
            if $crate::config::explicit($m, $id) {
                $dst = $val;
            }
        )*
    };
}

/// Write the resolved configuration of a command into `dir`.
pub fn echo(dir: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(RESOLVED_CONFIG);
    let text = serde_json::to_string_pretty(value).expect("config serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))
}

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
