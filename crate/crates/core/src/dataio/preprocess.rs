//! Preprocessing: clip segmentation with temporal down-sampling, reliability
//! based voxel selection, hemodynamic lag alignment, caption pairing, and
//! train-statistics z-scoring.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::{VideoClip, VoxelSelection};
use crate::error::{CoreError, Result};
use crate::tensor::{pearson, Mat};

/// A continuous frame sequence straight from acquisition.
pub struct RawVideo {
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    /// t x 3 x h x w in [0,1].
    pub pixels: Vec<f64>,
    pub fps: f64,
}

impl RawVideo {
    pub fn frame(&self, t: usize) -> &[f64] {
        let stride = 3 * self.height * self.width;
        &self.pixels[t * stride..(t + 1) * stride]
    }
}

/// Split a raw video into fixed-length clips, evenly sampling frames down to
/// `target_hz`, center-cropping to square and resizing to `out_size`.
pub fn segment_and_downsample(
    raw: &RawVideo,
    clip_seconds: f64,
    target_hz: f64,
    out_size: (usize, usize),
) -> Result<Vec<VideoClip>> {
    if target_hz <= 0.0 {
        return Err(CoreError::invalid("target_hz must be positive"));
    }
    if raw.fps < target_hz {
        return Err(CoreError::invalid(format!(
            "native fps {} below target {} Hz",
            raw.fps, target_hz
        )));
    }
    let duration = raw.n_frames as f64 / raw.fps;
    if duration + 1e-9 < clip_seconds {
        return Err(CoreError::invalid(format!(
            "raw video lasts {duration:.3}s, shorter than one {clip_seconds}s clip"
        )));
    }
    let n_clips = (duration / clip_seconds + 1e-9).floor() as usize;
    let frames_per_clip = (clip_seconds * target_hz).round() as usize;
    let raw_per_clip = clip_seconds * raw.fps;
    let step = raw.fps / target_hz;

    let mut clips = Vec::with_capacity(n_clips);
    for c in 0..n_clips {
        let base = (c as f64 * raw_per_clip).round() as usize;
        let mut clip = VideoClip::new(c, frames_per_clip, out_size.0, out_size.1);
        for j in 0..frames_per_clip {
            let src = base + ((j as f64 * step) + 1e-9).floor() as usize;
            let src = src.min(raw.n_frames - 1);
            let resized = crop_resize(raw.frame(src), raw.height, raw.width, out_size);
            clip.frame_mut(j).copy_from_slice(&resized);
        }
        clips.push(clip);
    }
    Ok(clips)
}

/// Center-crop to square, then bilinear-resize a 3xHxW frame.
fn crop_resize(frame: &[f64], h: usize, w: usize, out: (usize, usize)) -> Vec<f64> {
    let side = h.min(w);
    let y0 = (h - side) / 2;
    let x0 = (w - side) / 2;
    let (oh, ow) = out;
    let mut dst = vec![0.0; 3 * oh * ow];
    for ch in 0..3 {
        for oy in 0..oh {
            // Sample at pixel centers of the cropped square.
            let sy = (oy as f64 + 0.5) * side as f64 / oh as f64 - 0.5;
            let sy = sy.clamp(0.0, (side - 1) as f64);
            let y1 = sy.floor() as usize;
            let y2 = (y1 + 1).min(side - 1);
            let fy = sy - y1 as f64;
            for ox in 0..ow {
                let sx = (ox as f64 + 0.5) * side as f64 / ow as f64 - 0.5;
                let sx = sx.clamp(0.0, (side - 1) as f64);
                let x1 = sx.floor() as usize;
                let x2 = (x1 + 1).min(side - 1);
                let fx = sx - x1 as f64;
                let at = |yy: usize, xx: usize| frame[(ch * h + (y0 + yy)) * w + (x0 + xx)];
                let v = at(y1, x1) * (1.0 - fy) * (1.0 - fx)
                    + at(y1, x2) * (1.0 - fy) * fx
                    + at(y2, x1) * fy * (1.0 - fx)
                    + at(y2, x2) * fy * fx;
                dst[(ch * oh + oy) * ow + ox] = v;
            }
        }
    }
    dst
}

/// Cross-repetition reliability scores for one session: per-voxel Pearson
/// correlation across time, Fisher-z transformed. Zero-variance voxels score
/// negative infinity so they are never selected.
fn session_scores(rep_a: &Mat, rep_b: &Mat) -> Result<Vec<f64>> {
    if (rep_a.rows, rep_a.cols) != (rep_b.rows, rep_b.cols) {
        return Err(CoreError::shape(
            "select_voxels repetitions",
            format!("{}x{}", rep_a.rows, rep_a.cols),
            format!("{}x{}", rep_b.rows, rep_b.cols),
        ));
    }
    if rep_a.rows < 3 {
        return Err(CoreError::invalid("select_voxels needs at least 3 time points"));
    }
    let t = rep_a.rows;
    let v = rep_a.cols;
    let mut scores = vec![f64::NEG_INFINITY; v];
    let mut col_a = vec![0.0; t];
    let mut col_b = vec![0.0; t];
    for j in 0..v {
        for i in 0..t {
            col_a[i] = rep_a.at(i, j);
            col_b[i] = rep_b.at(i, j);
        }
        if let Some(r) = pearson(&col_a, &col_b) {
            // Fisher z; clamp away from +-1 to keep atanh finite.
            let r = r.clamp(-0.999999, 0.999999);
            scores[j] = r.atanh();
        }
    }
    Ok(scores)
}

/// Top-k voxels by session-averaged Fisher-z reliability. Ties break by
/// ascending voxel index so runs are reproducible.
pub fn select_voxels_sessions(sessions: &[(Mat, Mat)], k: usize) -> Result<VoxelSelection> {
    if sessions.is_empty() {
        return Err(CoreError::invalid("select_voxels: no sessions supplied"));
    }
    let v = sessions[0].0.cols;
    let mut avg = vec![0.0; v];
    for (a, b) in sessions {
        let s = session_scores(a, b)?;
        if s.len() != v {
            return Err(CoreError::invalid("select_voxels: sessions disagree on voxel count"));
        }
        for (acc, sv) in avg.iter_mut().zip(s.iter()) {
            *acc += sv;
        }
    }
    for acc in avg.iter_mut() {
        *acc /= sessions.len() as f64;
    }

    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| {
        avg[b]
            .partial_cmp(&avg[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let kept_n = k.min(v);
    let mut kept: Vec<usize> = order[..kept_n].to_vec();
    kept.sort_unstable();
    Ok(VoxelSelection { kept_indices: kept, scores: avg, k })
}

pub fn select_voxels(rep_a: &Mat, rep_b: &Mat, k: usize) -> Result<VoxelSelection> {
    let session = [(rep_a.clone(), rep_b.clone())];
    select_voxels_sessions(&session, k)
}

/// Pair stimulus at time t with BOLD at t + lag. A positive lag drops the
/// leading `lag/tr` volumes; a negative lag drops the same count from the
/// tail, which inverts a previous positive shift on the overlap.
pub fn apply_hemodynamic_lag(bold: &Mat, tr_seconds: f64, lag_seconds: f64) -> Result<Mat> {
    if tr_seconds <= 0.0 {
        return Err(CoreError::invalid("tr_seconds must be positive"));
    }
    let ratio = lag_seconds / tr_seconds;
    let shift = ratio.round();
    if (ratio - shift).abs() > 1e-9 {
        return Err(CoreError::invalid(format!(
            "lag {lag_seconds}s is not an integer multiple of TR {tr_seconds}s"
        )));
    }
    let shift = shift as i64;
    let t = bold.rows as i64;
    if shift.unsigned_abs() as i64 >= t {
        return Err(CoreError::invalid("lag shift exceeds run length"));
    }
    let (from, to) = if shift >= 0 {
        (shift as usize, bold.rows)
    } else {
        (0, (t + shift) as usize)
    };
    let mut out = Mat::zeros(to - from, bold.cols);
    for (dst, src) in (from..to).enumerate() {
        out.row_mut(dst).copy_from_slice(bold.row(src));
    }
    Ok(out)
}

/// Caption-selection rule: near-identical similarity picks one caption at
/// random, otherwise the two are joined with ", and then ".
pub fn pair_captions(
    caption_first: &str,
    caption_mid: &str,
    sim_first: f64,
    sim_mid: f64,
    threshold: f64,
    rng: &mut ChaCha8Rng,
) -> String {
    if (sim_first - sim_mid).abs() <= threshold {
        if rng.gen::<f64>() >= 0.5 {
            caption_first.to_string()
        } else {
            caption_mid.to_string()
        }
    } else {
        format!("{caption_first}, and then {caption_mid}")
    }
}

pub const CAPTION_SIM_THRESHOLD: f64 = 0.05;

/// Per-voxel mean/std computed on the training split only.
#[derive(Debug, Clone)]
pub struct ZScoreStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ZScoreStats {
    pub fn fit(train: &Mat) -> ZScoreStats {
        let n = train.rows as f64;
        let v = train.cols;
        let mut mean = vec![0.0; v];
        for i in 0..train.rows {
            for (m, &x) in mean.iter_mut().zip(train.row(i).iter()) {
                *m += x;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut std = vec![0.0; v];
        for i in 0..train.rows {
            for j in 0..v {
                let d = train.at(i, j) - mean[j];
                std[j] += d * d;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
        }
        ZScoreStats { mean, std }
    }

    pub fn apply(&self, data: &mut Mat) {
        for i in 0..data.rows {
            let row = data.row_mut(i);
            for (j, x) in row.iter_mut().enumerate() {
                let s = self.std[j];
                *x = if s > 0.0 { (*x - self.mean[j]) / s } else { 0.0 };
            }
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.mean.clone();
        out.extend_from_slice(&self.std);
        out
    }

    pub fn from_flat(data: &[f64]) -> ZScoreStats {
        let v = data.len() / 2;
        ZScoreStats { mean: data[..v].to_vec(), std: data[v..].to_vec() }
    }
}
