use nalgebra::DMatrix;

use super::stft::{magnitude, stft};
use super::{DspParams, LinearSpectrogram, MelNorm, MelSpectrogram};
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

/// Slaney mel scale: linear below 1 kHz, logarithmic above.
pub(crate) fn hz_to_mel(f: f64) -> f64 {
    if f < MIN_LOG_HZ {
        f / F_SP
    } else {
        MIN_LOG_MEL + (f / MIN_LOG_HZ).ln() / log_step()
    }
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    if m < MIN_LOG_MEL {
        m * F_SP
    } else {
        MIN_LOG_HZ * ((m - MIN_LOG_MEL) * log_step()).exp()
    }
}

/// Edge frequencies of the `n_mels` triangles (`n_mels + 2` points).
pub(crate) fn mel_edges(p: &DspParams) -> Vec<f64> {
    let lo = hz_to_mel(p.fmin);
    let hi = hz_to_mel(p.fmax);
    let n = p.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// Triangular mel filterbank, `n_mels × (n_fft/2 + 1)`.
///
/// Errors when a triangle falls between FFT bins and would be all zero
/// (too many mels for the frequency resolution).
pub fn mel_filterbank(p: &DspParams) -> Result<Matrix> {
    p.validate()?;
    let edges = mel_edges(p);
    let n_bins = p.n_bins();
    let bin_hz = p.sample_rate as f64 / p.n_fft as f64;
    let mut fb = Matrix::zeros(p.n_mels, n_bins);
    for m in 0..p.n_mels {
        let (f0, f1, f2) = (edges[m], edges[m + 1], edges[m + 2]);
        let scale = match p.mel_norm {
            MelNorm::Slaney => 2.0 / (f2 - f0),
            MelNorm::Peak => 1.0,
        };
        let mut peak: f64 = 0.0;
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let lower = (f - f0) / (f1 - f0);
            let upper = (f2 - f) / (f2 - f1);
            let w = lower.min(upper).max(0.0);
            peak = peak.max(w);
            fb.set(m, b, w * scale);
        }
        if peak == 0.0 {
            return Err(Error::InvalidParam(format!(
                "mel filter {m} ({f0:.1}-{f2:.1} Hz) covers no FFT bin; reduce n_mels or raise n_fft"
            )));
        }
        if p.mel_norm == MelNorm::Peak {
            for b in 0..n_bins {
                let v = fb.get(m, b) / peak;
                fb.set(m, b, v);
            }
        }
    }
    Ok(fb)
}

/// Filterbank together with its pseudo-inverse, built once per parameter set.
#[derive(Debug, Clone)]
pub struct MelBasis {
    pub params: DspParams,
    pub filterbank: Matrix,
    pub pinv: Matrix,
}

impl MelBasis {
    pub fn new(p: &DspParams) -> Result<Self> {
        let filterbank = mel_filterbank(p)?;
        let dm = DMatrix::from_row_slice(filterbank.rows, filterbank.cols, &filterbank.data);
        let pinv = dm
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::InvalidParam(format!("filterbank pseudo-inverse: {e}")))?;
        let pinv = Matrix::from_fn(pinv.nrows(), pinv.ncols(), |r, c| pinv[(r, c)]);
        Ok(Self {
            params: p.clone(),
            filterbank,
            pinv,
        })
    }
}

/// `ln(max(fb · |S|, floor))`.
pub fn linear_to_mel(lin: &LinearSpectrogram, basis: &MelBasis) -> Result<MelSpectrogram> {
    let p = &basis.params;
    if lin.magnitudes.rows != p.n_bins() {
        return Err(Error::Shape(format!(
            "linear spectrogram has {} bins, expected {}",
            lin.magnitudes.rows,
            p.n_bins()
        )));
    }
    let mel = basis.filterbank.matmul(&lin.magnitudes);
    let floor = p.log_floor;
    MelSpectrogram::new(mel.map(|v| v.max(floor).ln()), p.clone())
}

pub fn wav_to_mel(w: &Waveform, p: &DspParams) -> Result<MelSpectrogram> {
    wav_to_mel_with(w, &MelBasis::new(p)?)
}

pub fn wav_to_mel_with(w: &Waveform, basis: &MelBasis) -> Result<MelSpectrogram> {
    let p = &basis.params;
    let spec = stft(w, p)?;
    let lin = LinearSpectrogram {
        magnitudes: magnitude(&spec),
        params: p.clone(),
    };
    linear_to_mel(&lin, basis)
}

/// Pseudo-inverse mel inversion with non-negativity clipping.
pub fn mel_to_linear(m: &MelSpectrogram) -> Result<LinearSpectrogram> {
    Ok(mel_to_linear_with(m, &MelBasis::new(&m.params)?))
}

pub fn mel_to_linear_with(m: &MelSpectrogram, basis: &MelBasis) -> LinearSpectrogram {
    let lin = basis.pinv.matmul(&m.values.map(f64::exp));
    LinearSpectrogram {
        magnitudes: lin.map(|v| v.max(0.0)),
        params: m.params.clone(),
    }
}
