//! Pixel- and embedding-level reconstruction metrics.

use crate::dataio::VideoClip;
use crate::encoders::EmbeddingBackend;
use crate::error::{CoreError, Result};
use crate::evaluation::flow::FlowBackend;
use crate::tensor::{cosine, pearson};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
pub const PSNR_CAP_DB: f64 = 100.0;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

/// Separable valid-mode Gaussian filter over one channel plane.
fn gauss_filter(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_kernel();
    let r = SSIM_WINDOW / 2;
    let out_w = w - 2 * r;
    let out_h = h - 2 * r;
    // Horizontal pass.
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            tmp[y * out_w + x] = acc;
        }
    }
    // Vertical pass.
    let mut out = vec![0.0; out_h * out_w];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

/// Gaussian-windowed SSIM (window 11, sigma 1.5, data range 1.0), averaged
/// over channels and window positions.
pub fn ssim(gt_frame: &[f64], pred_frame: &[f64], h: usize, w: usize) -> Result<f64> {
    if gt_frame.len() != pred_frame.len() || gt_frame.len() != 3 * h * w {
        return Err(CoreError::shape(
            "ssim frames",
            (3 * h * w).to_string(),
            format!("{} vs {}", gt_frame.len(), pred_frame.len()),
        ));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::invalid(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    for ch in 0..3 {
        let a = &gt_frame[ch * h * w..(ch + 1) * h * w];
        let b = &pred_frame[ch * h * w..(ch + 1) * h * w];
        let mu_a = gauss_filter(a, h, w);
        let mu_b = gauss_filter(b, h, w);
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        let mu_aa = gauss_filter(&aa, h, w);
        let mu_bb = gauss_filter(&bb, h, w);
        let mu_ab = gauss_filter(&ab, h, w);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let va = mu_aa[i] - mu_a[i] * mu_a[i];
            let vb = mu_bb[i] - mu_b[i] * mu_b[i];
            let cov = mu_ab[i] - mu_a[i] * mu_b[i];
            let num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
            let den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
            acc += num / den;
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / 3.0)
}

pub fn ssim_clip(gt: &VideoClip, pred: &VideoClip) -> Result<f64> {
    check_clips("ssim", gt, pred)?;
    let mut acc = 0.0;
    for j in 0..gt.n_frames {
        acc += ssim(gt.frame(j), pred.frame(j), gt.height, gt.width)?;
    }
    Ok(acc / gt.n_frames as f64)
}

/// PSNR in dB at data range 1.0, capped at 100 dB for (near-)identical input.
pub fn psnr(gt_frame: &[f64], pred_frame: &[f64]) -> Result<f64> {
    if gt_frame.len() != pred_frame.len() || gt_frame.is_empty() {
        return Err(CoreError::shape(
            "psnr frames",
            gt_frame.len().to_string(),
            pred_frame.len().to_string(),
        ));
    }
    let mse = gt_frame
        .iter()
        .zip(pred_frame.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / gt_frame.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

pub fn psnr_clip(gt: &VideoClip, pred: &VideoClip) -> Result<f64> {
    check_clips("psnr", gt, pred)?;
    let mut acc = 0.0;
    for j in 0..gt.n_frames {
        acc += psnr(gt.frame(j), pred.frame(j))?;
    }
    Ok(acc / gt.n_frames as f64)
}

pub const HUE_BINS: usize = 32;

/// Circular hue histogram weighted by saturation * value.
pub fn hue_histogram(frame: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut hist = vec![0.0; HUE_BINS];
    for y in 0..h {
        for x in 0..w {
            let r = frame[y * w + x];
            let g = frame[(h + y) * w + x];
            let b = frame[(2 * h + y) * w + x];
            let max = r.max(g).max(b);
            let min = r.min(g).min(b);
            let delta = max - min;
            if delta <= 0.0 || max <= 0.0 {
                continue;
            }
            let hue = if max == r {
                60.0 * (((g - b) / delta) % 6.0)
            } else if max == g {
                60.0 * ((b - r) / delta + 2.0)
            } else {
                60.0 * ((r - g) / delta + 4.0)
            };
            let hue = if hue < 0.0 { hue + 360.0 } else { hue };
            let sat = delta / max;
            let val = max;
            let bin = ((hue / 360.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
            hist[bin] += sat * val;
        }
    }
    hist
}

/// Per-frame Pearson correlation of hue histograms, averaged over frames.
/// Zero-variance histograms (grayscale content) contribute 0.
pub fn hue_pcc(gt: &VideoClip, pred: &VideoClip) -> Result<f64> {
    check_clips("hue_pcc", gt, pred)?;
    let mut acc = 0.0;
    for j in 0..gt.n_frames {
        let hg = hue_histogram(gt.frame(j), gt.height, gt.width);
        let hp = hue_histogram(pred.frame(j), pred.height, pred.width);
        acc += pearson(&hg, &hp).unwrap_or(0.0);
    }
    Ok(acc / gt.n_frames as f64)
}

/// Cosine similarity of video-level embeddings.
pub fn vifi_score(
    gt: &VideoClip,
    pred: &VideoClip,
    embedder: &dyn EmbeddingBackend,
) -> Result<f64> {
    check_clips("vifi_score", gt, pred)?;
    let a = embedder.embed_video(gt);
    let b = embedder.embed_video(pred);
    Ok(cosine(&a, &b))
}

pub const CLIP_PCC_GATE: f64 = 0.6;

/// Mean adjacent-frame embedding similarity of the prediction, gated to 0
/// unless vifi strictly exceeds the threshold.
pub fn clip_pcc(
    pred: &VideoClip,
    vifi_value: f64,
    embedder: &dyn EmbeddingBackend,
    threshold: f64,
) -> Result<f64> {
    if pred.n_frames < 2 {
        return Err(CoreError::invalid("clip_pcc needs at least 2 frames"));
    }
    if vifi_value <= threshold {
        return Ok(0.0);
    }
    Ok(adjacent_similarity(pred, embedder))
}

/// Ungated smoothness statistic: mean cosine similarity between embeddings
/// of adjacent frames.
pub fn adjacent_similarity(clip: &VideoClip, embedder: &dyn EmbeddingBackend) -> f64 {
    let embeds: Vec<Vec<f64>> = (0..clip.n_frames)
        .map(|j| embedder.embed_frame(clip.frame(j), clip.height, clip.width))
        .collect();
    let mut acc = 0.0;
    for j in 0..clip.n_frames - 1 {
        acc += cosine(&embeds[j], &embeds[j + 1]);
    }
    acc / (clip.n_frames - 1) as f64
}

/// Mean end-point error between ground-truth and predicted optical flow over
/// consecutive frame pairs.
pub fn epe(gt: &VideoClip, pred: &VideoClip, flow: &dyn FlowBackend) -> Result<f64> {
    check_clips("epe", gt, pred)?;
    if gt.n_frames < 2 {
        return Err(CoreError::invalid("epe needs at least 2 frames"));
    }
    let (h, w) = (gt.height, gt.width);
    let mut acc = 0.0;
    let mut count = 0usize;
    for j in 0..gt.n_frames - 1 {
        let fg = flow.flow(gt.frame(j), gt.frame(j + 1), h, w)?;
        let fp = flow.flow(pred.frame(j), pred.frame(j + 1), h, w)?;
        for i in 0..h * w {
            let du = fg.0[i] - fp.0[i];
            let dv = fg.1[i] - fp.1[i];
            acc += (du * du + dv * dv).sqrt();
            count += 1;
        }
    }
    Ok(acc / count as f64)
}

fn check_clips(name: &str, a: &VideoClip, b: &VideoClip) -> Result<()> {
    if (a.n_frames, a.height, a.width) != (b.n_frames, b.height, b.width) {
        return Err(CoreError::shape(
            name,
            format!("{}x{}x{}", a.n_frames, a.height, a.width),
            format!("{}x{}x{}", b.n_frames, b.height, b.width),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::{generate_in_memory, SyntheticConfig};
    use crate::encoders::ToyEmbedder;

    fn toy_clip(seed: u64) -> VideoClip {
        let cfg = SyntheticConfig {
            n_train: 1,
            n_test: 1,
            n_voxels: 8,
            seed,
            ..Default::default()
        };
        let (_, split, _) = generate_in_memory(&cfg);
        split.clips.into_iter().next().unwrap()
    }

    #[test]
    fn identical_frames_hit_the_fixed_points() {
        let clip = toy_clip(3);
        assert!((ssim_clip(&clip, &clip.clone()).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(psnr_clip(&clip, &clip.clone()).unwrap(), PSNR_CAP_DB);
        assert!((hue_pcc(&clip, &clip.clone()).unwrap() - 1.0).abs() < 1e-9);
        let e = ToyEmbedder::new();
        assert!((vifi_score(&clip, &clip.clone(), &e).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn psnr_matches_the_direct_formula() {
        // Constant squared error of 0.01 -> 20 dB.
        let gt = vec![0.5; 3 * 16 * 16];
        let pred: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
        let db = psnr(&gt, &pred).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "PSNR at mse 0.01 should be 20 dB, got {db}");
    }

    #[test]
    fn checkerboard_against_its_inverse_has_negative_ssim() {
        let (h, w) = (32, 32);
        let mut a = vec![0.0; 3 * h * w];
        let mut b = vec![0.0; 3 * h * w];
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let v = ((x + y) % 2) as f64;
                    a[(ch * h + y) * w + x] = v;
                    b[(ch * h + y) * w + x] = 1.0 - v;
                }
            }
        }
        let s = ssim(&a, &b, h, w).unwrap();
        assert!(s < 0.0, "anti-correlated structure should give SSIM < 0, got {s}");
    }

    #[test]
    fn ssim_matches_a_direct_window_oracle() {
        // Independent oracle: direct weighted sums per window position.
        let clip = toy_clip(11);
        let noisy: Vec<f64> = clip
            .frame(0)
            .iter()
            .enumerate()
            .map(|(i, v)| (v + 0.05 * ((i % 7) as f64 - 3.0) / 3.0).clamp(0.0, 1.0))
            .collect();
        let (h, w) = (clip.height, clip.width);
        let fast = ssim(clip.frame(0), &noisy, h, w).unwrap();

        let k = gaussian_kernel();
        let c1 = 0.01f64.powi(2);
        let c2 = 0.03f64.powi(2);
        let r = SSIM_WINDOW / 2;
        let mut total = 0.0;
        for ch in 0..3 {
            let a = &clip.frame(0)[ch * h * w..(ch + 1) * h * w];
            let b = &noisy[ch * h * w..(ch + 1) * h * w];
            let mut acc = 0.0;
            let mut n = 0;
            for cy in r..h - r {
                for cx in r..w - r {
                    let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
                            let wgt = k[dy] * k[dx];
                            let av = a[(cy + dy - r) * w + cx + dx - r];
                            let bv = b[(cy + dy - r) * w + cx + dx - r];
                            ma += wgt * av;
                            mb += wgt * bv;
                            maa += wgt * av * av;
                            mbb += wgt * bv * bv;
                            mab += wgt * av * bv;
                        }
                    }
                    let va = maa - ma * ma;
                    let vb = mbb - mb * mb;
                    let cov = mab - ma * mb;
                    acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    n += 1;
                }
            }
            total += acc / n as f64;
        }
        let oracle = total / 3.0;
        assert!(
            (fast - oracle).abs() < 1e-9,
            "separable SSIM {fast} != direct oracle {oracle}"
        );
    }

    fn hsv_to_rgb(hue_deg: f64) -> (f64, f64, f64) {
        // Full saturation and value.
        let h6 = (hue_deg.rem_euclid(360.0)) / 60.0;
        let x = 1.0 - ((h6 % 2.0) - 1.0).abs();
        match h6 as usize {
            0 => (1.0, x, 0.0),
            1 => (x, 1.0, 0.0),
            2 => (0.0, 1.0, x),
            3 => (0.0, x, 1.0),
            4 => (x, 0.0, 1.0),
            _ => (1.0, 0.0, x),
        }
    }

    fn striped_clip(hues: &[f64]) -> VideoClip {
        let (h, w) = (16, 32);
        let mut clip = VideoClip::new(0, 2, h, w);
        for j in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let hue = hues[x * hues.len() / w];
                    let (r, g, b) = hsv_to_rgb(hue);
                    let i0 = clip.idx(j, 0, y, x);
                    let i1 = clip.idx(j, 1, y, x);
                    let i2 = clip.idx(j, 2, y, x);
                    clip.pixels[i0] = r;
                    clip.pixels[i1] = g;
                    clip.pixels[i2] = b;
                }
            }
        }
        clip
    }

    #[test]
    fn hue_rotation_turns_correlation_negative() {
        // Two-color clip with hues 90 degrees apart: a 180-degree rotation
        // moves all the histogram mass to disjoint bins, so the correlation
        // must come out negative.
        let two = striped_clip(&[0.0, 90.0]);
        let two_rot = striped_clip(&[180.0, 270.0]);
        let r2 = hue_pcc(&two, &two_rot).unwrap();
        assert!(r2 < -0.05, "disjoint two-color histograms should anti-correlate, got {r2}");

        // Content filling half of the hue circle anti-correlates strongly
        // under a 180-degree rotation (complementary indicator histograms).
        let half: Vec<f64> = (0..16).map(|i| i as f64 * 180.0 / 16.0).collect();
        let half_rot: Vec<f64> = half.iter().map(|h| h + 180.0).collect();
        let wheel = striped_clip(&half);
        let wheel_rot = striped_clip(&half_rot);
        let r = hue_pcc(&wheel, &wheel_rot).unwrap();
        assert!(r < -0.9, "hue-rotated half-wheel should strongly anti-correlate, got {r}");

        // Grayscale clips fall back to 0 via the zero-variance guard.
        let gray = VideoClip::new(0, 2, 16, 16);
        let mut gray2 = gray.clone();
        gray2.pixels.fill(0.5);
        assert_eq!(hue_pcc(&gray, &gray2).unwrap(), 0.0);
    }

    #[test]
    fn clip_pcc_gate_is_strict() {
        let clip = toy_clip(5);
        let e = ToyEmbedder::new();
        // At exactly the threshold the gate closes.
        assert_eq!(clip_pcc(&clip, CLIP_PCC_GATE, &e, CLIP_PCC_GATE).unwrap(), 0.0);
        let passed = clip_pcc(&clip, 0.61, &e, CLIP_PCC_GATE).unwrap();
        assert!(passed > 0.0);
        // A static clip above the gate scores 1.
        let mut still = clip.clone();
        let first: Vec<f64> = still.frame(0).to_vec();
        for j in 1..still.n_frames {
            still.frame_mut(j).copy_from_slice(&first);
        }
        let s = clip_pcc(&still, 0.9, &e, CLIP_PCC_GATE).unwrap();
        assert!((s - 1.0).abs() < 1e-9, "static clip smoothness should be 1, got {s}");
    }

    #[test]
    fn metric_symmetry_holds_where_defined() {
        let a = toy_clip(21);
        let b = toy_clip(22);
        assert!((ssim_clip(&a, &b).unwrap() - ssim_clip(&b, &a).unwrap()).abs() < 1e-12);
        assert!((psnr_clip(&a, &b).unwrap() - psnr_clip(&b, &a).unwrap()).abs() < 1e-12);
        assert!((hue_pcc(&a, &b).unwrap() - hue_pcc(&b, &a).unwrap()).abs() < 1e-12);
        let e = ToyEmbedder::new();
        assert!(
            (vifi_score(&a, &b, &e).unwrap() - vifi_score(&b, &a, &e).unwrap()).abs() < 1e-12
        );
    }
}
