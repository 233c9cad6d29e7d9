//! Minimal chart rendering to PNG: loss curves, metric bars, and importance
//! heat maps. No interactive output; every plot is a static file.

use std::path::Path;

use anyhow::{Context, Result};

pub struct Canvas {
    w: usize,
    h: usize,
    pixels: Vec<u8>, // rgb
}

const BG: [u8; 3] = [250, 250, 248];
const AXIS: [u8; 3] = [60, 60, 60];
const SERIES: [[u8; 3]; 4] = [[214, 69, 65], [31, 119, 180], [44, 160, 44], [148, 103, 189]];

impl Canvas {
    pub fn new(w: usize, h: usize) -> Self {
        let mut pixels = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            pixels.extend_from_slice(&BG);
        }
        Canvas { w, h, pixels }
    }

    fn put(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.w as i64 || y >= self.h as i64 {
            return;
        }
        let idx = (y as usize * self.w + x as usize) * 3;
        self.pixels[idx..idx + 3].copy_from_slice(&rgb);
    }

    fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, rgb: [u8; 3]) {
        let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = x0 + (x1 - x0) * t;
            let y = y0 + (y1 - y0) * t;
            self.put(x.round() as i64, y.round() as i64, rgb);
            self.put(x.round() as i64 + 1, y.round() as i64, rgb);
        }
    }

    fn fill_rect(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, rgb: [u8; 3]) {
        for y in y0..y1.min(self.h) {
            for x in x0..x1.min(self.w) {
                self.put(x as i64, y as i64, rgb);
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), self.w as u32, self.h as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&self.pixels)?;
        Ok(())
    }
}

/// Line plot of one or more series over a shared x axis (epoch index).
pub fn line_chart(path: &Path, series: &[(&str, Vec<f64>)]) -> Result<()> {
    let (w, h) = (640, 400);
    let margin = 40.0;
    let mut canvas = Canvas::new(w, h);
    let finite: Vec<f64> = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .filter(|v| v.is_finite())
        .collect();
    if finite.is_empty() {
        canvas.save(path)?;
        return Ok(());
    }
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-12);
    let max_len = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let plot_w = w as f64 - 2.0 * margin;
    let plot_h = h as f64 - 2.0 * margin;

    canvas.line(margin, margin, margin, h as f64 - margin, AXIS);
    canvas.line(margin, h as f64 - margin, w as f64 - margin, h as f64 - margin, AXIS);

    for (si, (_, values)) in series.iter().enumerate() {
        let rgb = SERIES[si % SERIES.len()];
        let mut prev: Option<(f64, f64)> = None;
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                prev = None;
                continue;
            }
            let x = margin + plot_w * i as f64 / (max_len - 1) as f64;
            let y = h as f64 - margin - plot_h * (v - lo) / span;
            if let Some((px, py)) = prev {
                canvas.line(px, py, x, y, rgb);
            }
            prev = Some((x, y));
        }
    }
    canvas.save(path)
}

/// Bar chart of labelled values.
pub fn bar_chart(path: &Path, bars: &[(String, f64)]) -> Result<()> {
    let (w, h) = (640, 400);
    let margin = 40usize;
    let mut canvas = Canvas::new(w, h);
    if bars.is_empty() {
        return canvas.save(path);
    }
    let hi = bars.iter().map(|(_, v)| v.abs()).fold(0.0f64, f64::max).max(1e-12);
    let plot_h = (h - 2 * margin) as f64;
    let slot = (w - 2 * margin) / bars.len();
    for (i, (_, v)) in bars.iter().enumerate() {
        let bh = (plot_h * v.abs() / hi) as usize;
        let x0 = margin + i * slot + slot / 6;
        let x1 = margin + (i + 1) * slot - slot / 6;
        canvas.fill_rect(x0, h - margin - bh, x1, h - margin, SERIES[i % SERIES.len()]);
    }
    canvas.line(
        margin as f64,
        (h - margin) as f64,
        (w - margin) as f64,
        (h - margin) as f64,
        AXIS,
    );
    canvas.save(path)
}

/// Heat map of per-voxel weights in [0,1], wrapped into a near-square grid.
pub fn heat_map(path: &Path, weights: &[f64]) -> Result<()> {
    let n = weights.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let cell = 6usize;
    let mut canvas = Canvas::new(cols * cell, rows * cell);
    for (i, &wv) in weights.iter().enumerate() {
        let v = wv.clamp(0.0, 1.0);
        // Dark blue to bright yellow ramp.
        let rgb = [
            (40.0 + 215.0 * v) as u8,
            (30.0 + 200.0 * v) as u8,
            (90.0 + 40.0 * (1.0 - v)) as u8,
        ];
        let (r, c) = (i / cols, i % cols);
        canvas.fill_rect(c * cell, r * cell, (c + 1) * cell, (r + 1) * cell, rgb);
    }
    canvas.save(path)
}
