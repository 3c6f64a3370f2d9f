//! Reversible mapping between mel spectrograms and fixed-size images.
//!
//! Forward path: optional right-padding of the time axis to a frame budget
//! (with the log floor), an affine map of the mel's own `[min, max]` onto the
//! pixel range, then a bilinear resize to the target size. Resampling uses
//! corner-aligned sampling: destination index `i` of `n_out` reads source
//! coordinate `i · (n_in − 1) / (n_out − 1)` (or 0 when `n_out = 1`).
//!
//! Everything needed to undo those steps travels in [`ScalingMeta`].

use serde::{Deserialize, Serialize};

use crate::dsp::{DspParams, MelSpectrogram};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageCodecParams {
    /// `(height, width)` in pixels.
    pub target_size: (usize, usize),
    /// Pixel range `(lo, hi)`.
    pub value_range: (f64, f64),
    /// Pad (or reject) the time axis to exactly this many frames before resizing.
    pub frame_budget: Option<usize>,
}

impl Default for ImageCodecParams {
    fn default() -> Self {
        Self {
            target_size: (512, 512),
            value_range: (-1.0, 1.0),
            frame_budget: None,
        }
    }
}

impl ImageCodecParams {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.target_size;
        if h < 8 || w < 8 {
            return Err(Error::InvalidParam(format!(
                "image size must be at least 8x8, got {h}x{w}"
            )));
        }
        let (lo, hi) = self.value_range;
        if !(lo < hi) {
            return Err(Error::InvalidParam(format!(
                "value range must satisfy lo < hi, got ({lo}, {hi})"
            )));
        }
        if self.frame_budget == Some(0) {
            return Err(Error::InvalidParam("frame budget must be positive".into()));
        }
        Ok(())
    }

    pub fn range_width(&self) -> f64 {
        self.value_range.1 - self.value_range.0
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.value_range.0 + self.value_range.1)
    }
}

/// What [`image_to_mel`] needs to undo [`mel_to_image`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingMeta {
    pub orig_shape: (usize, usize),
    pub dyn_min: f64,
    pub dyn_max: f64,
    pub pad_frames: usize,
    pub value_range: (f64, f64),
    pub params: DspParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    pub pixels: Matrix,
    pub meta: ScalingMeta,
}

impl SpectrogramImage {
    pub fn shape(&self) -> (usize, usize) {
        self.pixels.shape()
    }
}

/// Bilinear resize with corner-aligned sampling.
pub fn resize_bilinear(src: &Matrix, rows: usize, cols: usize) -> Matrix {
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (x.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let rc: Vec<_> = (0..rows).map(|r| coord(r, rows, src.rows)).collect();
    let cc: Vec<_> = (0..cols).map(|c| coord(c, cols, src.cols)).collect();
    Matrix::from_fn(rows, cols, |r, c| {
        let (r0, r1, fr) = rc[r];
        let (c0, c1, fc) = cc[c];
        let top = src.get(r0, c0) * (1.0 - fc) + src.get(r0, c1) * fc;
        let bot = src.get(r1, c0) * (1.0 - fc) + src.get(r1, c1) * fc;
        top * (1.0 - fr) + bot * fr
    })
}

/// Centre-crop a mel to at most `frames` frames.
pub fn center_crop(m: &MelSpectrogram, frames: usize) -> MelSpectrogram {
    if m.n_frames() <= frames {
        return m.clone();
    }
    let start = (m.n_frames() - frames) / 2;
    MelSpectrogram {
        values: m.values.col_slice(start, frames),
        params: m.params.clone(),
    }
}

pub fn mel_to_image(m: &MelSpectrogram, c: &ImageCodecParams) -> Result<SpectrogramImage> {
    c.validate()?;
    let (n_mels, t) = m.shape();
    if n_mels == 0 || t == 0 {
        return Err(Error::EmptyInput("mel spectrogram"));
    }
    let (padded, pad_frames) = match c.frame_budget {
        Some(budget) if t > budget => {
            return Err(Error::Codec(format!(
                "mel has {t} frames, exceeding the frame budget {budget}; crop first"
            )))
        }
        Some(budget) => {
            let floor = m.params.log_min();
            let mut v = Matrix::filled(n_mels, budget, floor);
            for r in 0..n_mels {
                for col in 0..t {
                    v.set(r, col, m.values.get(r, col));
                }
            }
            (v, budget - t)
        }
        None => (m.values.clone(), 0),
    };
    let dyn_min = padded.min();
    let dyn_max = padded.max();
    let (lo, hi) = c.value_range;
    let normalized = if dyn_max > dyn_min {
        let s = (hi - lo) / (dyn_max - dyn_min);
        padded.map(|v| (lo + (v - dyn_min) * s).clamp(lo, hi))
    } else {
        padded.map(|_| c.midpoint())
    };
    let (h, w) = c.target_size;
    Ok(SpectrogramImage {
        pixels: resize_bilinear(&normalized, h, w),
        meta: ScalingMeta {
            orig_shape: (n_mels, t),
            dyn_min,
            dyn_max,
            pad_frames,
            value_range: c.value_range,
            params: m.params.clone(),
        },
    })
}

pub fn image_to_mel(img: &SpectrogramImage) -> Result<MelSpectrogram> {
    let meta = &img.meta;
    let (n_mels, t) = meta.orig_shape;
    let (lo, hi) = meta.value_range;
    if n_mels == 0 || t == 0 {
        return Err(Error::Codec("meta records an empty original shape".into()));
    }
    if !(meta.dyn_min <= meta.dyn_max) || !meta.dyn_min.is_finite() || !meta.dyn_max.is_finite() {
        return Err(Error::Codec(format!(
            "invalid dynamic range [{}, {}]",
            meta.dyn_min, meta.dyn_max
        )));
    }
    if !(lo < hi) {
        return Err(Error::Codec(format!("invalid value range ({lo}, {hi})")));
    }
    if meta.params.n_mels != n_mels {
        return Err(Error::Codec(format!(
            "meta shape has {n_mels} mels but params say {}",
            meta.params.n_mels
        )));
    }
    let (h, w) = img.pixels.shape();
    if h == 0 || w == 0 {
        return Err(Error::Codec("image has no pixels".into()));
    }
    let full = resize_bilinear(&img.pixels, n_mels, t + meta.pad_frames);
    let span = meta.dyn_max - meta.dyn_min;
    let values = if span > 0.0 {
        let s = span / (hi - lo);
        full.map(|p| meta.dyn_min + (p.clamp(lo, hi) - lo) * s)
    } else {
        full.map(|_| meta.dyn_min)
    };
    MelSpectrogram::new(values.col_slice(0, t), meta.params.clone())
}

/// Average-pool by 2 per level; returns scales `1, 1/2, …, 1/2^(levels−1)`.
pub fn downsample_pyramid(img: &SpectrogramImage, levels: usize) -> Result<Vec<SpectrogramImage>> {
    if levels == 0 {
        return Err(Error::InvalidParam("pyramid needs at least one level".into()));
    }
    let (h, w) = img.shape();
    let f = 1usize << (levels - 1);
    if h % f != 0 || w % f != 0 {
        return Err(Error::InvalidParam(format!(
            "{h}x{w} is not divisible by {f} for a {levels}-level pyramid"
        )));
    }
    let mut out = vec![img.clone()];
    for _ in 1..levels {
        let prev = &out.last().expect("non-empty").pixels;
        let pooled = Matrix::from_fn(prev.rows / 2, prev.cols / 2, |r, c| {
            0.25 * (prev.get(2 * r, 2 * c)
                + prev.get(2 * r, 2 * c + 1)
                + prev.get(2 * r + 1, 2 * c)
                + prev.get(2 * r + 1, 2 * c + 1))
        });
        out.push(SpectrogramImage {
            pixels: pooled,
            meta: img.meta.clone(),
        });
    }
    Ok(out)
}
