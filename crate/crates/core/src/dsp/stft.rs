use std::f64::consts::PI;
use std::sync::Arc;

use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::DspParams;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::par;

/// Complex STFT, stored frame-major: `frame(t)` is `n_bins` contiguous values.
#[derive(Debug, Clone, PartialEq)]
pub struct Stft {
    pub n_bins: usize,
    pub n_frames: usize,
    pub data: Vec<Complex64>,
}

impl Stft {
    pub fn zeros(n_bins: usize, n_frames: usize) -> Self {
        Self {
            n_bins,
            n_frames,
            data: vec![Complex64::new(0.0, 0.0); n_bins * n_frames],
        }
    }

    #[inline]
    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[frame * self.n_bins + bin]
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.n_bins..(t + 1) * self.n_bins]
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Analysis window of length `n_fft`: a `win_length` Hann centred in zeros.
fn fft_window(p: &DspParams) -> Vec<f64> {
    let mut w = vec![0.0; p.n_fft];
    let off = (p.n_fft - p.win_length) / 2;
    for (i, v) in hann_periodic(p.win_length).into_iter().enumerate() {
        w[off + i] = v;
    }
    w
}

/// Reflect index into `[0, n)` without repeating the edge sample.
fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

struct Plans {
    fwd: Arc<dyn RealToComplex<f64>>,
    inv: Arc<dyn ComplexToReal<f64>>,
}

fn plans(n_fft: usize) -> Plans {
    let mut planner = RealFftPlanner::<f64>::new();
    Plans {
        fwd: planner.plan_fft_forward(n_fft),
        inv: planner.plan_fft_inverse(n_fft),
    }
}

/// Centred STFT with reflect padding; `n_frames = 1 + len / hop`.
pub fn stft(w: &Waveform, p: &DspParams) -> Result<Stft> {
    if w.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    p.check_rate(w)?;
    Ok(stft_samples(&w.samples, p))
}

pub(crate) fn stft_samples(x: &[f64], p: &DspParams) -> Stft {
    let n_fft = p.n_fft;
    let hop = p.hop_length;
    let pad = (n_fft / 2) as isize;
    let n_frames = 1 + x.len() / hop;
    let n_bins = p.n_bins();
    let window = fft_window(p);
    let fwd = plans(n_fft).fwd;

    let frames = par::map_range(n_frames, |t| {
        let start = (t * hop) as isize - pad;
        let mut buf: Vec<f64> = (0..n_fft)
            .map(|k| x[reflect(start + k as isize, x.len())] * window[k])
            .collect();
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft length");
        out
    });
    let mut data = Vec::with_capacity(n_bins * n_frames);
    for f in frames {
        data.extend(f);
    }
    Stft {
        n_bins,
        n_frames,
        data,
    }
}

/// Weighted overlap-add inverse of [`stft`]; output length `(T − 1) · hop`.
pub fn istft(spec: &Stft, p: &DspParams) -> Result<Waveform> {
    if spec.n_bins != p.n_bins() {
        return Err(Error::Shape(format!(
            "spectrum has {} bins, params expect {}",
            spec.n_bins,
            p.n_bins()
        )));
    }
    Ok(Waveform::new(istft_samples(spec, p), p.sample_rate))
}

pub(crate) fn istft_samples(spec: &Stft, p: &DspParams) -> Vec<f64> {
    if spec.n_frames == 0 {
        return Vec::new();
    }
    let full = overlap_add(spec, p);
    let pad = p.n_fft / 2;
    full[pad..pad + (spec.n_frames - 1) * p.hop_length].to_vec()
}

/// Window-sum-normalised overlap-add over the full padded extent
/// `n_fft + hop · (T − 1)`.
fn overlap_add(spec: &Stft, p: &DspParams) -> Vec<f64> {
    let n_fft = p.n_fft;
    let hop = p.hop_length;
    let t_count = spec.n_frames;
    let window = fft_window(p);
    let inv = plans(n_fft).inv;
    let scale = 1.0 / n_fft as f64;

    let frames = par::map_range(t_count, |t| {
        let mut buf = spec.frame(t).to_vec();
        // A real signal's DC and Nyquist bins are real.
        buf[0].im = 0.0;
        let last = buf.len() - 1;
        buf[last].im = 0.0;
        let mut out = inv.make_output_vec();
        inv.process(&mut buf, &mut out).expect("ifft length");
        out.iter_mut()
            .zip(&window)
            .for_each(|(v, w)| *v *= w * scale);
        out
    });

    let total = n_fft + hop * (t_count - 1);
    let mut acc = vec![0.0; total];
    let mut wsum = vec![0.0; total];
    for (t, frame) in frames.iter().enumerate() {
        let off = t * hop;
        for k in 0..n_fft {
            acc[off + k] += frame[k];
            wsum[off + k] += window[k] * window[k];
        }
    }
    acc.iter()
        .zip(&wsum)
        .map(|(&a, &ws)| if ws > 1e-11 { a / ws } else { a })
        .collect()
}

/// `|X|` as an `n_bins × frames` matrix.
pub fn magnitude(spec: &Stft) -> Matrix {
    let mut m = Matrix::zeros(spec.n_bins, spec.n_frames);
    for t in 0..spec.n_frames {
        for (b, c) in spec.frame(t).iter().enumerate() {
            m.set(b, t, c.norm());
        }
    }
    m
}
