//! Short-time objective intelligibility (classic STOI, not ESTOI).
//!
//! Both signals are resampled to 10 kHz, silent frames (40 dB below the
//! loudest clean frame) are dropped, and 256-sample Hann frames with 50%
//! overlap are analysed with a 512-point FFT into 15 one-third-octave bands
//! starting at 150 Hz. Band envelopes over 30-frame (384 ms) segments are
//! normalised and clipped at −15 dB SDR, and the result is the mean
//! correlation across segments and bands.

use realfft::RealFftPlanner;
use rubato::audioadapter_buffers::direct::SequentialSliceOfVecs;
use rubato::{Fft, FixedSync, Resampler};

use crate::audio::Waveform;
use crate::error::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Resample a mono signal with rubato's FFT resampler.
pub fn resample(x: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to || x.is_empty() {
        return Ok(x.to_vec());
    }
    let mut r = Fft::<f64>::new(from as usize, to as usize, 1024, 1, FixedSync::Input)
        .map_err(|e| Error::InvalidParam(format!("resampler {from} -> {to} Hz: {e}")))?;
    let input = vec![x.to_vec()];
    let adapter_in = SequentialSliceOfVecs::new(&input, 1, x.len()).expect("one channel");
    let cap = r.process_all_needed_output_len(x.len());
    let mut output = vec![vec![0.0; cap]];
    let mut adapter_out = SequentialSliceOfVecs::new_mut(&mut output, 1, cap).expect("one channel");
    let (_, n) = r
        .process_all_into_buffer(&adapter_in, &mut adapter_out, x.len(), None)
        .map_err(|e| Error::InvalidParam(format!("resampling failed: {e}")))?;
    let mut out = output.pop().expect("one channel");
    out.truncate(n);
    Ok(out)
}

/// `hanning(n + 2)[1:-1]`: a symmetric Hann window without its zero endpoints.
fn inner_hann(n: usize) -> Vec<f64> {
    let m = (n + 1) as f64;
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / m).cos())
        .collect()
}

fn frames(x: &[f64], w: &[f64], hop: usize) -> Vec<Vec<f64>> {
    let n = w.len();
    if x.len() <= n {
        return Vec::new();
    }
    (0..x.len() - n)
        .step_by(hop)
        .map(|i| x[i..i + n].iter().zip(w).map(|(a, b)| a * b).collect())
        .collect()
}

fn overlap_add(frames: &[Vec<f64>], hop: usize) -> Vec<f64> {
    if frames.is_empty() {
        return Vec::new();
    }
    let n = frames[0].len();
    let mut out = vec![0.0; (frames.len() - 1) * hop + n];
    for (k, f) in frames.iter().enumerate() {
        for (i, v) in f.iter().enumerate() {
            out[k * hop + i] += v;
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Drop frames more than `DYN_RANGE_DB` below the loudest frame of `x`,
/// from both signals, and resynthesise by overlap-add.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = inner_hann(FRAME);
    let xf = frames(x, &w, FRAME / 2);
    let yf = frames(y, &w, FRAME / 2);
    let energies: Vec<f64> = xf.iter().map(|f| 20.0 * (norm(f) + EPS).log10()).collect();
    let peak = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<bool> = energies.iter().map(|e| peak - DYN_RANGE_DB - e < 0.0).collect();
    let pick = |fs: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        fs.into_iter().zip(&keep).filter(|(_, k)| **k).map(|(f, _)| f).collect()
    };
    (overlap_add(&pick(xf), FRAME / 2), overlap_add(&pick(yf), FRAME / 2))
}

/// One-third-octave band matrix over the `NFFT / 2 + 1` bins.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let n_bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..n_bins).map(|i| i as f64 * STOI_RATE as f64 / NFFT as f64).collect();
    let nearest = |f: f64| -> usize {
        let mut best = 0;
        for (i, &g) in freqs.iter().enumerate() {
            if (g - f).powi(2) < (freqs[best] - f).powi(2) {
                best = i;
            }
        }
        best
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, `BANDS` rows × frames.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let w = inner_hann(FRAME);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    let fs = frames(x, &w, FRAME / 2);
    let mut env = vec![Vec::with_capacity(fs.len()); bands.len()];
    for f in &fs {
        buf.iter_mut().for_each(|v| *v = 0.0);
        buf[..FRAME].copy_from_slice(f);
        fft.process(&mut buf, &mut spec).expect("fft sizes match");
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            let e: f64 = spec[lo..hi].iter().map(|c| c.norm_sqr()).sum();
            env[b].push(e.sqrt());
        }
    }
    env
}

/// STOI of `processed` against `clean`, clamped to `[0, 1]`.
///
/// Signals are truncated to the shorter length before analysis.
pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    if clean.sample_rate != processed.sample_rate {
        return Err(Error::InvalidParam(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate, processed.sample_rate
        )));
    }
    let n = clean.len().min(processed.len());
    if n == 0 {
        return Err(Error::EmptyInput("STOI signal"));
    }
    let x = resample(&clean.samples[..n], clean.sample_rate, STOI_RATE)?;
    let y = resample(&processed.samples[..n], clean.sample_rate, STOI_RATE)?;
    let (x, y) = remove_silent_frames(&x, &y);

    let bands = third_octave_bands();
    let xe = band_envelopes(&x, &bands);
    let ye = band_envelopes(&y, &bands);
    let t = xe[0].len();
    if t < SEGMENT {
        return Err(Error::InvalidParam(format!(
            "need at least {SEGMENT} non-silent frames ({} ms of speech) for STOI, got {t}",
            SEGMENT * FRAME / 2 * 1000 / STOI_RATE as usize
        )));
    }

    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=t {
        for b in 0..BANDS {
            let xs = &xe[b][m - SEGMENT..m];
            let ys = &ye[b][m - SEGMENT..m];
            let k = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(yv, xv)| (yv * k).min(xv * (1.0 + clip)))
                .collect();
            let mx = xs.iter().sum::<f64>() / SEGMENT as f64;
            let my = yp.iter().sum::<f64>() / SEGMENT as f64;
            let xc: Vec<f64> = xs.iter().map(|v| v - mx).collect();
            let yc: Vec<f64> = yp.iter().map(|v| v - my).collect();
            let (nx, ny) = (norm(&xc) + EPS, norm(&yc) + EPS);
            total += xc.iter().zip(&yc).map(|(a, b)| (a / nx) * (b / ny)).sum::<f64>();
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}
