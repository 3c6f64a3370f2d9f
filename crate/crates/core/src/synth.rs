//! Deterministic speech-like test signals.
//!
//! A glottal pulse train with a drifting pitch contour is shaped by three
//! formant resonators that move from vowel to vowel, modulated at syllable
//! rate, with noise bursts standing in for fricatives and short pauses
//! between words.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::Waveform;

const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [440.0, 1020.0, 2240.0],
    [300.0, 870.0, 2240.0],
];

/// Two-pole resonator at `freq` with bandwidth `bw`.
struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self {
            a1: 0.0,
            a2: 0.0,
            gain: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tune(&mut self, freq: f64, bw: f64, sr: f64) {
        let r = (-PI * bw / sr).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq / sr).cos();
        self.a2 = -r * r;
        self.gain = 1.0 - r;
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// A `secs`-long speech-like clip at `sample_rate`, fully determined by `seed`.
pub fn speech_like(seed: u64, secs: f64, sample_rate: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = sample_rate as f64;
    let n = (secs * sr) as usize;
    let f0_base = rng.gen_range(95.0..210.0);
    let syllable = rng.gen_range(0.16..0.26);
    let n_syl = (secs / syllable).ceil() as usize + 1;
    let plan: Vec<(usize, bool, bool)> = (0..n_syl)
        .map(|_| (rng.gen_range(0..VOWELS.len()), rng.gen_bool(0.35), rng.gen_bool(0.15)))
        .collect();

    let mut res = [Resonator::new(), Resonator::new(), Resonator::new()];
    let mut phase = 0.0;
    let mut out = Vec::with_capacity(n);
    let mut tilt = 0.0;
    for i in 0..n {
        let t = i as f64 / sr;
        let pos = t / syllable;
        let k = (pos as usize).min(n_syl - 2);
        let frac = pos - k as f64;
        let (v0, fric, pause) = plan[k];
        let v1 = plan[k + 1].0;
        // formants glide into the next vowel over the last third of a syllable
        let mix = ((frac - 0.66) / 0.34).clamp(0.0, 1.0);
        for (j, r) in res.iter_mut().enumerate() {
            let f = VOWELS[v0][j] * (1.0 - mix) + VOWELS[v1][j] * mix;
            r.tune(f, 60.0 + 40.0 * j as f64, sr);
        }
        let f0 = f0_base * (1.0 + 0.12 * (2.0 * PI * 0.7 * t).sin() - 0.08 * t / secs.max(1e-9));
        phase += f0 / sr;
        let pulse = if phase >= 1.0 {
            phase -= 1.0;
            1.0
        } else {
            0.0
        };
        // spectral tilt of the glottal source
        tilt = 0.94 * tilt + pulse;
        let voiced: f64 = res.iter_mut().map(|r| r.tick(tilt)).sum();
        let env = if pause { 0.0 } else { (PI * frac).sin().powf(0.6) };
        let mut s = voiced * env;
        if fric && frac < 0.3 {
            s = 0.5 * s + 0.08 * rng.gen_range(-1.0..1.0) * (PI * frac / 0.3).sin();
        }
        out.push(s);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    Waveform::new(out, sample_rate)
}

/// Uniform white noise in `[-amp, amp]`.
pub fn white_noise(seed: u64, n: usize, amp: f64, sample_rate: u32) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..n).map(|_| rng.gen_range(-amp..amp)).collect(), sample_rate)
}

/// `clean + noise` scaled so the signal-to-noise ratio is `snr_db`.
pub fn add_noise(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Waveform {
    let p = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>() / w.len().max(1) as f64;
    let n = clean.len().min(noise.len());
    let k = (p(&clean.samples[..n]) / (p(&noise.samples[..n]) * 10f64.powf(snr_db / 10.0))).sqrt();
    Waveform::new(
        clean.samples[..n]
            .iter()
            .zip(&noise.samples[..n])
            .map(|(c, e)| c + k * e)
            .collect(),
        clean.sample_rate,
    )
}
