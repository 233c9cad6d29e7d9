//! Raw acquisition layout and the preparation pipeline that turns it into a
//! prepared dataset: clip segmentation with temporal down-sampling,
//! reliability-based voxel selection over two repetitions, hemodynamic lag
//! alignment, caption pairing, and train-statistics z-scoring.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, ArrayMeta};
use crate::dataio::preprocess::{
    apply_hemodynamic_lag, pair_captions, segment_and_downsample, select_voxels, RawVideo,
    ZScoreStats, CAPTION_SIM_THRESHOLD,
};
use crate::dataio::synthetic::{
    descriptor_dim, render_frame, sample_scenes, StandardNormal, SyntheticConfig,
};
use crate::dataio::{save_split, DatasetManifest, Split};
use crate::encoders::EmbeddingBackend;
use crate::error::{CoreError, Result};
use crate::tensor::{cosine, Mat};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawManifest {
    pub name: String,
    pub n_clips: usize,
    pub clip_seconds: f64,
    pub native_fps: f64,
    pub target_hz: f64,
    /// Raw acquisition canvas (taller than wide is allowed).
    pub raw_height: usize,
    pub raw_width: usize,
    /// Output frame size after center-crop and resize.
    pub out_size: usize,
    /// Total recorded voxels; half carry signal, half are noise.
    pub n_voxels_total: usize,
    /// Reliability selection keeps this many.
    pub voxel_k: usize,
    pub tr_seconds: f64,
    pub lag_seconds: f64,
    pub arrays: BTreeMap<String, ArrayMeta>,
    /// Two caption candidates per clip, one per line: first-frame caption
    /// then mid-frame caption.
    pub captions: String,
}

/// Emit a raw acquisition: a continuous video at twice the target frame
/// rate on a larger canvas, two BOLD repetitions with a hemodynamic lag,
/// interleaved signal/noise voxels, and two caption candidates per clip.
pub fn generate_raw_acquisition(cfg: &SyntheticConfig, dir: &Path) -> Result<RawManifest> {
    if cfg.block_aligned {
        return Err(CoreError::invalid("raw acquisition only renders soft scenes"));
    }
    let out_size = cfg.frame_size;
    let raw_h = out_size + out_size / 8; // e.g. 72 for 64
    let raw_w = raw_h + 8;
    let scale = raw_h as f64 / out_size as f64;
    let clip_seconds = 2.0;
    let native_fps = 8.0;
    let target_hz = 4.0;
    let frames_per_clip_raw = (clip_seconds * native_fps) as usize;
    let tr_seconds = 2.0;
    let lag_seconds = 4.0;
    let lag_shift = (lag_seconds / tr_seconds) as usize;
    let n_clips = cfg.n_train;
    let dim = descriptor_dim(out_size);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_true = Mat::zeros(cfg.n_voxels, dim);
    let w_scale = 1.0 / (dim as f64).sqrt();
    for v in w_true.data.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal) * w_scale;
    }
    let scenes = sample_scenes(&mut rng, cfg, n_clips);

    // Continuous raw video: scenes move at half speed per raw frame so the
    // 4 Hz down-sampled clip sees the configured per-frame velocity.
    let mut video = vec![0u8; n_clips * frames_per_clip_raw * 3 * raw_h * raw_w];
    let mut frame_buf = vec![0.0; 3 * raw_h * raw_w];
    let x_off = (raw_w - raw_h) as f64 / 2.0;
    for (c, scene) in scenes.iter().enumerate() {
        for k in 0..frames_per_clip_raw {
            frame_buf.fill(0.0);
            let step = k as f64 / (native_fps / target_hz);
            let center = (
                (scene.center0.0 + step * scene.velocity.0 as f64) * scale + x_off,
                (scene.center0.1 + step * scene.velocity.1 as f64) * scale,
            );
            render_frame(
                scene,
                center,
                scene.radius * scale,
                raw_h,
                raw_w,
                false,
                &mut frame_buf,
            );
            let base = (c * frames_per_clip_raw + k) * 3 * raw_h * raw_w;
            for (i, &p) in frame_buf.iter().enumerate() {
                video[base + i] = (p.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }

    // BOLD: one volume per TR, stimulus response delayed by the lag, two
    // repetitions with independent noise. Signal voxels sit at even
    // indices, pure-noise voxels at odd indices.
    let n_total = 2 * cfg.n_voxels;
    let t_bold = n_clips + lag_shift;
    let mut bold_a = Mat::zeros(t_bold, n_total);
    let mut bold_b = Mat::zeros(t_bold, n_total);
    for t in 0..t_bold {
        let response: Option<Mat> = if t >= lag_shift {
            let scene = &scenes[t - lag_shift];
            let mut f0 = vec![0.0; 3 * out_size * out_size];
            render_frame(
                scene,
                scene.center0,
                scene.radius,
                out_size,
                out_size,
                false,
                &mut f0,
            );
            for p in f0.iter_mut() {
                *p = (*p * 255.0).round() / 255.0;
            }
            let desc = scene.descriptor(&f0, out_size);
            let d = Mat::from_vec(dim, 1, desc);
            Some(crate::tensor::matmul(&w_true, false, &d, false))
        } else {
            None
        };
        for v in 0..n_total {
            let signal = if v % 2 == 0 {
                response.as_ref().map(|r| r.data[v / 2]).unwrap_or(0.0)
            } else {
                0.0
            };
            let (na, nb): (f64, f64) = if v % 2 == 0 {
                (0.05 * rng.sample::<f64, _>(StandardNormal), 0.05 * rng.sample::<f64, _>(StandardNormal))
            } else {
                (rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
            };
            *bold_a.at_mut(t, v) = signal + na;
            *bold_b.at_mut(t, v) = signal + nb;
        }
    }

    // Caption candidates: first and mid frame of each clip describe the
    // same scene here, so the candidates agree.
    let mut caption_lines = Vec::with_capacity(2 * n_clips);
    for scene in &scenes {
        caption_lines.push(scene.caption());
        caption_lines.push(scene.caption());
    }

    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut arrays = BTreeMap::new();
    arrays.insert(
        "video".to_string(),
        container::write_u8(
            dir,
            "video",
            &[n_clips * frames_per_clip_raw, 3, raw_h, raw_w],
            &video,
        )?,
    );
    arrays.insert(
        "bold_a".to_string(),
        container::write_f32(dir, "bold_a", &[t_bold, n_total], &bold_a.data)?,
    );
    arrays.insert(
        "bold_b".to_string(),
        container::write_f32(dir, "bold_b", &[t_bold, n_total], &bold_b.data)?,
    );
    let captions = container::write_captions(dir, "caption_candidates", &caption_lines)?;

    let manifest = RawManifest {
        name: format!("{}-raw", cfg.name),
        n_clips,
        clip_seconds,
        native_fps,
        target_hz,
        raw_height: raw_h,
        raw_width: raw_w,
        out_size,
        n_voxels_total: n_total,
        voxel_k: cfg.n_voxels,
        tr_seconds,
        lag_seconds,
        arrays,
        captions,
    };
    container::save_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Turn a raw acquisition into a prepared split: segment and down-sample
/// the video, select reliable voxels, align for the hemodynamic lag,
/// resolve captions, and z-score with the split's own statistics.
pub fn prepare(
    raw_dir: &Path,
    out_dir: &Path,
    embedder: &dyn EmbeddingBackend,
    seed: u64,
) -> Result<DatasetManifest> {
    let manifest: RawManifest = container::load_json(&raw_dir.join("manifest.json"))?;
    let video_meta = manifest
        .arrays
        .get("video")
        .ok_or_else(|| CoreError::invalid("raw manifest missing 'video'"))?;
    let video = container::read_u8(raw_dir, video_meta)?;
    let (t_frames, h, w) = (
        video_meta.shape[0],
        video_meta.shape[2],
        video_meta.shape[3],
    );
    let raw_video = RawVideo {
        n_frames: t_frames,
        height: h,
        width: w,
        pixels: video.iter().map(|&p| p as f64 / 255.0).collect(),
        fps: manifest.native_fps,
    };
    let mut clips = segment_and_downsample(
        &raw_video,
        manifest.clip_seconds,
        manifest.target_hz,
        (manifest.out_size, manifest.out_size),
    )?;

    let bold_a = Mat::from_vec(
        manifest.arrays["bold_a"].shape[0],
        manifest.n_voxels_total,
        container::read_f32(raw_dir, &manifest.arrays["bold_a"])?,
    );
    let bold_b = Mat::from_vec(
        manifest.arrays["bold_b"].shape[0],
        manifest.n_voxels_total,
        container::read_f32(raw_dir, &manifest.arrays["bold_b"])?,
    );
    let selection = select_voxels(&bold_a, &bold_b, manifest.voxel_k)?;

    // Trial-averaged response over the kept voxels.
    let mut averaged = Mat::zeros(bold_a.rows, selection.kept_indices.len());
    for t in 0..bold_a.rows {
        for (j, &v) in selection.kept_indices.iter().enumerate() {
            *averaged.at_mut(t, j) = 0.5 * (bold_a.at(t, v) + bold_b.at(t, v));
        }
    }
    let lagged = apply_hemodynamic_lag(&averaged, manifest.tr_seconds, manifest.lag_seconds)?;

    let n = lagged.rows.min(clips.len());
    clips.truncate(n);
    let mut fmri = Mat::zeros(n, lagged.cols);
    for t in 0..n {
        fmri.row_mut(t).copy_from_slice(lagged.row(t));
    }
    let stats = ZScoreStats::fit(&fmri);
    stats.apply(&mut fmri);

    // Resolve captions through the pairing rule against the middle frame.
    let candidates = container::read_captions(raw_dir, &manifest.captions, 2 * manifest.n_clips)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (c, clip) in clips.iter_mut().enumerate() {
        let first = &candidates[2 * c];
        let mid = &candidates[2 * c + 1];
        let mid_frame = clip.n_frames / 2 - 1;
        let frame_embed = embedder.embed_frame(clip.frame(mid_frame), clip.height, clip.width);
        let sim_first = cosine(&embedder.embed_text(first), &frame_embed);
        let sim_mid = cosine(&embedder.embed_text(mid), &frame_embed);
        clip.caption = pair_captions(first, mid, sim_first, sim_mid, CAPTION_SIM_THRESHOLD, &mut rng);
        clip.sample_id = c;
    }

    let prepared = DatasetManifest {
        name: manifest.name.replace("-raw", "-prepared"),
        split: Split::Train,
        n_samples: n,
        n_voxels: fmri.cols,
        frames_per_clip: (manifest.clip_seconds * manifest.target_hz) as usize,
        frame_hz: manifest.target_hz,
        frame_size: (manifest.out_size, manifest.out_size),
        lag_seconds: manifest.lag_seconds,
        tr_seconds: manifest.tr_seconds,
        captions: String::new(),
        paths: Default::default(),
    };
    let kept: Vec<f64> = selection.kept_indices.iter().map(|&v| v as f64).collect();
    save_split(
        out_dir,
        prepared,
        &fmri,
        &clips,
        &[
            ("kept_voxels", vec![kept.len()], kept),
            ("zstats", vec![2, fmri.cols], stats.flat()),
        ],
    )
}
