//! Mono waveforms and WAV I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio samples at a declared sample rate, nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Trim leading and trailing frames quieter than `top_db` below the peak
    /// frame RMS, using non-overlapping analysis frames of `frame` samples.
    pub fn trim_silence(&self, top_db: f64, frame: usize) -> Waveform {
        let frame = frame.max(1);
        let rms: Vec<f64> = self
            .samples
            .chunks(frame)
            .map(|c| (c.iter().map(|x| x * x).sum::<f64>() / c.len() as f64).sqrt())
            .collect();
        let peak = rms.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Waveform::new(Vec::new(), self.sample_rate);
        }
        let thresh = peak * 10f64.powf(-top_db / 20.0);
        let first = rms.iter().position(|&r| r > thresh).unwrap_or(0);
        let last = rms.iter().rposition(|&r| r > thresh).unwrap_or(0);
        let start = first * frame;
        let end = ((last + 1) * frame).min(self.samples.len());
        Waveform::new(self.samples[start..end].to_vec(), self.sample_rate)
    }
}

/// Header facts needed to build a manifest without decoding samples.
#[derive(Debug, Clone, Copy)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub channels: u16,
    pub frames: u32,
}

pub fn probe_wav(path: &Path) -> Result<WavInfo> {
    let reader = hound::WavReader::open(path).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })?;
    let spec = reader.spec();
    Ok(WavInfo {
        sample_rate: spec.sample_rate,
        channels: spec.channels,
        frames: reader.duration(),
    })
}

/// Read a mono WAV file (integer PCM or 32-bit float) into a waveform.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err)?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Write a waveform as mono 32-bit float WAV.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        writer.write_sample(s as f32).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Write a waveform as mono 16-bit PCM WAV (clipped to [-1, 1]).
pub fn write_wav_i16(path: &Path, w: &Waveform) -> Result<()> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in &w.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}
