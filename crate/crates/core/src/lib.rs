//! Mel-spectrogram post-filter toolkit.
//!
//! Spectrograms are treated as single-channel images: a Griffin-Lim round
//! trip produces degraded ("coarse") mels, a residual U-Net generator learns
//! to restore the original detail, and a bank of multi-scale patch
//! discriminators supplies adversarial and feature-matching signals.

pub mod audio;
pub mod autograd;
pub mod dataio;
pub mod dsp;
pub mod error;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod matrix;
pub mod model;
pub mod par;
pub mod synth;
pub mod training;

pub use error::{Error, ErrorClass, Result};
