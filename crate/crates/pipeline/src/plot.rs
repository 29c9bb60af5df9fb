//! Side-by-side mel-spectrogram figures.

use std::path::Path;

use image::{Rgb, RgbImage};
use lipsynth_signal::MelSpectrogram;

use crate::error::{PipelineError, Result};

/// Pixels per mel frame and per band.
pub const CELL: u32 = 2;
pub const GAP: u32 = 6;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);

/// Rows and columns: a single row up to three panels, two columns beyond.
pub fn grid_shape(n: usize) -> (usize, usize) {
    if n <= 3 {
        (1, n)
    } else {
        (n.div_ceil(2), 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PanelGeometry {
    pub rows: usize,
    pub cols: usize,
    pub panel_width: u32,
    pub panel_height: u32,
}

impl PanelGeometry {
    /// Top-left pixel of panel `i`, filled row by row.
    pub fn origin(&self, i: usize) -> (u32, u32) {
        let (r, c) = ((i / self.cols) as u32, (i % self.cols) as u32);
        (
            GAP + c * (self.panel_width + GAP),
            GAP + r * (self.panel_height + GAP),
        )
    }

    pub fn image_size(&self) -> (u32, u32) {
        (
            GAP + self.cols as u32 * (self.panel_width + GAP),
            GAP + self.rows as u32 * (self.panel_height + GAP),
        )
    }
}

/// Five-stop dark-blue to yellow ramp.
fn colour(x: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = x.clamp(0.0, 1.0) * 4.0;
    let i = (x.floor() as usize).min(3);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Draws every mel with one colour scale, time left to right and low
/// frequencies at the bottom.
pub fn render_mel_grid(mels: &[&MelSpectrogram]) -> Result<(RgbImage, PanelGeometry)> {
    if mels.is_empty() {
        return Err(PipelineError::InvalidInput("nothing to plot".into()));
    }
    let bands = mels[0].bands;
    if mels.iter().any(|m| m.bands != bands) {
        return Err(PipelineError::InvalidInput("mel-spectrograms differ in band count".into()));
    }
    let (lo, hi) = mels
        .iter()
        .flat_map(|m| m.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 0.0 };
    let (rows, cols) = grid_shape(mels.len());
    let frames = mels.iter().map(|m| m.frames).max().unwrap_or(0).max(1);
    let geo = PanelGeometry {
        rows,
        cols,
        panel_width: frames as u32 * CELL,
        panel_height: bands as u32 * CELL,
    };
    let (w, h) = geo.image_size();
    let mut img = RgbImage::from_pixel(w, h, BACKGROUND);
    for (i, m) in mels.iter().enumerate() {
        let (x0, y0) = geo.origin(i);
        for t in 0..m.frames {
            for (b, &v) in m.frame(t).iter().enumerate() {
                let x = if span > 0.0 { (v - lo) / span } else { 0.5 };
                let px = colour(x);
                let top = y0 + (bands - 1 - b) as u32 * CELL;
                for dy in 0..CELL {
                    for dx in 0..CELL {
                        img.put_pixel(x0 + t as u32 * CELL + dx, top + dy, px);
                    }
                }
            }
        }
    }
    Ok((img, geo))
}

pub fn plot_mel_comparison(mels: &[&MelSpectrogram], path: &Path) -> Result<PanelGeometry> {
    let (img, geo) = render_mel_grid(mels)?;
    img.save(path)
        .map_err(|e| PipelineError::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(geo)
}
