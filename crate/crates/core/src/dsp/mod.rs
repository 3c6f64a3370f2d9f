//! Spectral analysis and synthesis: STFT/ISTFT, mel projection, log
//! compression, Griffin-Lim phase reconstruction and the coarse-mel round
//! trip that produces the degraded generator inputs.
//!
//! Conventions pinned here: periodic Hann window (zero-padded and centred in
//! `n_fft` when `win_length < n_fft`), centred frames with reflect padding of
//! `n_fft / 2`, magnitude (not power) spectra, natural-log compression with a
//! floor, and a Moore-Penrose pseudo-inverse for mel inversion.

mod griffin_lim;
mod mel;
mod stft;

pub use griffin_lim::{griffin_lim, phase_seed, spectral_convergence};
pub use mel::{linear_to_mel, mel_filterbank, mel_to_linear, mel_to_linear_with, wav_to_mel, wav_to_mel_with, MelBasis};
pub use stft::{hann_periodic, istft, magnitude, stft, Stft};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Filterbank row normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MelNorm {
    /// Each triangle scaled by `2 / (f_hi − f_lo)` (constant area).
    #[default]
    Slaney,
    /// Each triangle scaled to a peak of exactly 1.
    Peak,
}

/// Analysis/synthesis parameters shared by every spectral operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DspParams {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub griffin_lim_iters: usize,
    pub log_floor: f64,
    pub mel_norm: MelNorm,
}

pub const DEFAULT_SAMPLE_RATE: u32 = 22050;
pub const DEFAULT_N_FFT: usize = 1024;
pub const DEFAULT_WIN_LENGTH: usize = 1024;
pub const DEFAULT_HOP_LENGTH: usize = 256;
pub const DEFAULT_N_MELS: usize = 80;
pub const DEFAULT_GRIFFIN_LIM_ITERS: usize = 60;
pub const DEFAULT_LOG_FLOOR: f64 = 1e-5;

impl Default for DspParams {
    fn default() -> Self {
        Self::for_rate(DEFAULT_SAMPLE_RATE)
    }
}

impl DspParams {
    /// Defaults with `fmax` at the Nyquist frequency of `sample_rate`.
    pub fn for_rate(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            n_fft: DEFAULT_N_FFT,
            win_length: DEFAULT_WIN_LENGTH,
            hop_length: DEFAULT_HOP_LENGTH,
            n_mels: DEFAULT_N_MELS,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            griffin_lim_iters: DEFAULT_GRIFFIN_LIM_ITERS,
            log_floor: DEFAULT_LOG_FLOOR,
            mel_norm: MelNorm::Slaney,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.n_fft < 2 || self.n_fft % 2 != 0 {
            return bad(format!("n_fft must be even and >= 2, got {}", self.n_fft));
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return bad(format!(
                "win_length {} must be in [1, n_fft={}]",
                self.win_length, self.n_fft
            ));
        }
        if self.hop_length == 0 || self.hop_length > self.win_length {
            return bad(format!(
                "hop_length {} must be in [1, win_length={}]",
                self.hop_length, self.win_length
            ));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1".into());
        }
        let nyq = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyq) {
            return bad(format!(
                "need 0 <= fmin < fmax <= {nyq}, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad(format!("log_floor must be positive, got {}", self.log_floor));
        }
        Ok(())
    }

    /// Short stable hash of every field; pairs extracted with different
    /// parameters never share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).expect("params serialize");
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `ln(log_floor)`, the smallest value a log-mel entry can take.
    pub fn log_min(&self) -> f64 {
        self.log_floor.ln()
    }

    pub(crate) fn check_rate(&self, w: &Waveform) -> Result<()> {
        if w.sample_rate != self.sample_rate {
            return Err(Error::InvalidParam(format!(
                "waveform sample rate {} does not match params {}",
                w.sample_rate, self.sample_rate
            )));
        }
        Ok(())
    }
}

/// Non-negative magnitude spectrogram, `n_bins × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSpectrogram {
    pub magnitudes: Matrix,
    pub params: DspParams,
}

/// Log-compressed mel spectrogram, `n_mels × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub params: DspParams,
}

impl MelSpectrogram {
    pub fn new(values: Matrix, params: DspParams) -> Result<Self> {
        if values.rows != params.n_mels {
            return Err(Error::Shape(format!(
                "mel has {} rows, params say {}",
                values.rows, params.n_mels
            )));
        }
        if values.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                term: "mel spectrogram".into(),
            });
        }
        Ok(Self { values, params })
    }

    pub fn n_frames(&self) -> usize {
        self.values.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Raise entries below `ln(log_floor)` to the floor.
    pub fn clamp_floor(mut self) -> Self {
        let lo = self.params.log_min();
        self.values.data.iter_mut().for_each(|v| *v = v.max(lo));
        self
    }
}

/// Griffin-Lim round trip of a clip's own mel: invert the mel to a magnitude
/// spectrogram, reconstruct a waveform by Griffin-Lim, re-extract the mel and
/// align frame counts to the original.
pub fn make_coarse(w: &Waveform, p: &DspParams, seed: u64) -> Result<MelSpectrogram> {
    let basis = MelBasis::new(p)?;
    let original = mel::wav_to_mel_with(w, &basis)?;
    coarse_from_mel(&original, &basis, seed)
}

/// [`make_coarse`] starting from an already extracted mel.
pub fn coarse_from_mel(original: &MelSpectrogram, basis: &MelBasis, seed: u64) -> Result<MelSpectrogram> {
    let p = &original.params;
    let lin = mel_to_linear_with(original, basis);
    let recon = griffin_lim(&lin, p.griffin_lim_iters, seed)?;
    let re = mel::wav_to_mel_with(&recon, basis)?;
    let t = original.n_frames();
    let values = if re.n_frames() >= t {
        re.values.col_slice(0, t)
    } else {
        // Synthesis is never shorter under the centred convention; pad with
        // the floor to honour the shape contract regardless.
        let mut m = Matrix::filled(p.n_mels, t, p.log_min());
        for r in 0..p.n_mels {
            for c in 0..re.n_frames() {
                m.set(r, c, re.values.get(r, c));
            }
        }
        m
    };
    MelSpectrogram::new(values, p.clone())
}
