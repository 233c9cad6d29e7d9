//! Optical-flow backends. The default is exhaustive block matching:
//! deterministic, dependency-free, and exact on integer translations.

use crate::error::{CoreError, Result};

/// Dense flow from frame_a to frame_b: per-pixel (dx, dy) in pixels.
pub trait FlowBackend: Send + Sync {
    fn name(&self) -> &str;
    fn flow(
        &self,
        frame_a: &[f64],
        frame_b: &[f64],
        h: usize,
        w: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Exhaustive block matching over non-overlapping blocks. Ties prefer the
/// smallest displacement, then lexicographic (dy, dx), so static content
/// reports zero flow. A zero-motion bias keeps low-amplitude noise from
/// spawning spurious flow: a candidate displacement must beat the null
/// displacement by `zero_bias` per pixel value or the block stays put.
pub struct BlockMatchingFlow {
    pub block: usize,
    pub search: i32,
    pub zero_bias: f64,
}

impl Default for BlockMatchingFlow {
    fn default() -> Self {
        BlockMatchingFlow { block: 8, search: 4, zero_bias: 0.015 }
    }
}

impl BlockMatchingFlow {
    fn candidates(&self) -> Vec<(i32, i32)> {
        let mut c = Vec::new();
        for dy in -self.search..=self.search {
            for dx in -self.search..=self.search {
                c.push((dy, dx));
            }
        }
        c.sort_by_key(|&(dy, dx)| (dy * dy + dx * dx, dy, dx));
        c
    }
}

impl FlowBackend for BlockMatchingFlow {
    fn name(&self) -> &str {
        "block"
    }

    fn flow(
        &self,
        frame_a: &[f64],
        frame_b: &[f64],
        h: usize,
        w: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if frame_a.len() != 3 * h * w || frame_b.len() != 3 * h * w {
            return Err(CoreError::shape(
                "flow frames",
                (3 * h * w).to_string(),
                format!("{} vs {}", frame_a.len(), frame_b.len()),
            ));
        }
        let bs = self.block;
        if h % bs != 0 || w % bs != 0 {
            return Err(CoreError::invalid(format!(
                "frame {h}x{w} not divisible by block size {bs}"
            )));
        }
        let candidates = self.candidates();
        let mut u = vec![0.0; h * w];
        let mut v = vec![0.0; h * w];
        for by in (0..h).step_by(bs) {
            for bx in (0..w).step_by(bs) {
                let mut best = (0i32, 0i32);
                let mut best_ssd = f64::INFINITY;
                for &(dy, dx) in &candidates {
                    let ty = by as i32 + dy;
                    let tx = bx as i32 + dx;
                    if ty < 0 || tx < 0 || ty + bs as i32 > h as i32 || tx + bs as i32 > w as i32 {
                        continue;
                    }
                    let (ty, tx) = (ty as usize, tx as usize);
                    let mut ssd = 0.0;
                    'block: for ch in 0..3 {
                        for y in 0..bs {
                            for x in 0..bs {
                                let a = frame_a[(ch * h + by + y) * w + bx + x];
                                let b = frame_b[(ch * h + ty + y) * w + tx + x];
                                let d = a - b;
                                ssd += d * d;
                                if ssd >= best_ssd {
                                    break 'block;
                                }
                            }
                        }
                    }
                    if ssd < best_ssd {
                        best_ssd = ssd;
                        best = (dy, dx);
                    }
                }
                // Zero-motion bias: reject candidate motion that does not
                // clearly beat staying put.
                if best != (0, 0) {
                    let mut ssd_zero = 0.0;
                    for ch in 0..3 {
                        for y in 0..bs {
                            for x in 0..bs {
                                let a = frame_a[(ch * h + by + y) * w + bx + x];
                                let b = frame_b[(ch * h + by + y) * w + bx + x];
                                let d = a - b;
                                ssd_zero += d * d;
                            }
                        }
                    }
                    let slack = self.zero_bias * (3 * bs * bs) as f64;
                    if ssd_zero <= best_ssd + slack {
                        best = (0, 0);
                    }
                }
                for y in by..by + bs {
                    for x in bx..bx + bs {
                        u[y * w + x] = best.1 as f64;
                        v[y * w + x] = best.0 as f64;
                    }
                }
            }
        }
        Ok((u, v))
    }
}

pub fn flow_backend(name: &str) -> Result<std::sync::Arc<dyn FlowBackend>> {
    match name {
        "block" => Ok(std::sync::Arc::new(BlockMatchingFlow::default())),
        _ => Err(CoreError::UnknownBackend {
            kind: "flow".into(),
            name: name.into(),
            known: "block".into(),
        }),
    }
}
