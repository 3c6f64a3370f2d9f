use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex64;
use sha2::{Digest, Sha256};

use super::stft::{istft_samples, stft_samples, Stft};
use super::LinearSpectrogram;
use crate::audio::Waveform;
use crate::error::{Error, Result};

/// Phase reconstruction from a magnitude spectrogram.
///
/// Starts from uniformly random phase drawn from `seed`, then performs
/// `iters` rounds of: synthesise with the current phase, re-analyse, keep the
/// new phase. The final waveform is synthesised from the target magnitudes
/// and the last phase estimate, so `iters = 0` is a random-phase synthesis.
pub fn griffin_lim(spec: &LinearSpectrogram, iters: usize, seed: u64) -> Result<Waveform> {
    let p = &spec.params;
    let mags = &spec.magnitudes;
    if mags.rows != p.n_bins() {
        return Err(Error::Shape(format!(
            "magnitudes have {} bins, expected {}",
            mags.rows,
            p.n_bins()
        )));
    }
    if mags.cols == 0 {
        return Err(Error::EmptyInput("spectrogram"));
    }
    let (n_bins, n_frames) = (mags.rows, mags.cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = Stft::zeros(n_bins, n_frames);
    for t in 0..n_frames {
        for b in 0..n_bins {
            let phi = rng.gen_range(0.0..2.0 * PI);
            est.data[t * n_bins + b] = Complex64::from_polar(mags.get(b, t), phi);
        }
    }
    for _ in 0..iters {
        let x = istft_samples(&est, p);
        let rebuilt = stft_samples(&x, p);
        debug_assert_eq!(rebuilt.n_frames, n_frames);
        for t in 0..n_frames {
            for b in 0..n_bins {
                let c = rebuilt.at(b, t);
                let unit = if c.norm() > 0.0 {
                    c / c.norm()
                } else {
                    Complex64::new(1.0, 0.0)
                };
                est.data[t * n_bins + b] = unit * mags.get(b, t);
            }
        }
    }
    Ok(Waveform::new(istft_samples(&est, p), p.sample_rate))
}

/// `‖|STFT(x)| − S‖_F / ‖S‖_F`, compared over the common frame range.
pub fn spectral_convergence(target: &LinearSpectrogram, x: &Waveform) -> Result<f64> {
    let p = &target.params;
    if x.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    let s = stft_samples(&x.samples, p);
    let t = s.n_frames.min(target.magnitudes.cols);
    let mut num = 0.0;
    let mut den = 0.0;
    for f in 0..t {
        for b in 0..s.n_bins {
            let want = target.magnitudes.get(b, f);
            let d = s.at(b, f).norm() - want;
            num += d * d;
            den += want * want;
        }
    }
    Ok((num / den.max(f64::MIN_POSITIVE)).sqrt())
}

/// Stable per-clip Griffin-Lim seed derived from an identifier.
pub fn phase_seed(id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
