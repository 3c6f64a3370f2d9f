//! Stacked mel-spectrogram panels as a PNG.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use specpost::dsp::MelSpectrogram;

use crate::Failure;

// viridis at nine evenly spaced stops
const VIRIDIS: [[f64; 3]; 9] = [
    [68.0, 1.0, 84.0],
    [71.0, 44.0, 122.0],
    [59.0, 81.0, 139.0],
    [44.0, 113.0, 142.0],
    [33.0, 144.0, 141.0],
    [39.0, 173.0, 129.0],
    [92.0, 200.0, 99.0],
    [170.0, 220.0, 50.0],
    [253.0, 231.0, 37.0],
];

const GAP: usize = 4;

fn colour(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (VIRIDIS[i][k] * (1.0 - f) + VIRIDIS[i + 1][k] * f).round() as u8;
    }
    out
}

/// Render `mels` top to bottom on one colour scale, low frequencies at the
/// bottom of each panel, each cell drawn as a `zoom`×`zoom` block.
pub fn render(mels: &[MelSpectrogram], zoom: usize, out: &Path) -> Result<(usize, usize), Failure> {
    let shape = mels[0].shape();
    if let Some(m) = mels.iter().find(|m| m.shape() != shape) {
        return Err(Failure::data(format!(
            "mel shapes differ: {}x{} vs {}x{}",
            shape.0,
            shape.1,
            m.shape().0,
            m.shape().1
        )));
    }
    let (rows, cols) = shape;
    let lo = mels.iter().map(|m| m.values.min()).fold(f64::INFINITY, f64::min);
    let hi = mels.iter().map(|m| m.values.max()).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let width = cols * zoom;
    let panel_h = rows * zoom;
    let height = mels.len() * panel_h + (mels.len() - 1) * GAP;
    let mut pixels = vec![255u8; width * height * 3];
    for (p, m) in mels.iter().enumerate() {
        let top = p * (panel_h + GAP);
        for y in 0..panel_h {
            let r = rows - 1 - y / zoom;
            for x in 0..width {
                let c = colour((m.values.get(r, x / zoom) - lo) / span);
                let i = ((top + y) * width + x) * 3;
                pixels[i..i + 3].copy_from_slice(&c);
            }
        }
    }

    let file = File::create(out).map_err(|e| Failure::data(format!("cannot create {}: {e}", out.display())))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()
        .and_then(|mut w| w.write_image_data(&pixels))
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", out.display())))?;
    Ok((width, height))
}
