//! Synthetic video-fMRI generator with known ground-truth coupling.
//!
//! Each sample is a colored shape translating at a constant integer pixel
//! velocity. The voxel response is a fixed linear image of the scene
//! descriptor plus optional Gaussian noise, with the mixing matrix persisted
//! next to the data. Captions are templated from the same descriptor, so the
//! caption, the clip and the voxels all agree by construction.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{save_split, DatasetManifest, Split, VideoClip};
use crate::dataio::preprocess::ZScoreStats;
use crate::error::{CoreError, Result};
use crate::tensor::Mat;

pub const PALETTE: [(&str, [f64; 3]); 8] = [
    ("red", [1.0, 0.1, 0.1]),
    ("orange", [1.0, 0.55, 0.1]),
    ("yellow", [1.0, 1.0, 0.15]),
    ("green", [0.1, 0.9, 0.2]),
    ("cyan", [0.1, 0.9, 0.9]),
    ("blue", [0.15, 0.25, 1.0]),
    ("purple", [0.55, 0.15, 0.95]),
    ("magenta", [1.0, 0.15, 0.85]),
];

pub const SHAPES: [&str; 4] = ["square", "circle", "triangle", "cross"];

/// Descriptor layout: velocity (2, normalized by 4), radius (normalized by
/// the frame side), rgb (3), shape one-hot, then a color-weighted block
/// occupancy map of the first frame (3 x (size/8)^2), the retinotopic part
/// of the scene code.
pub const DESCRIPTOR_HEAD: usize = 2 + 1 + 3 + SHAPES.len();

pub fn descriptor_dim(frame_size: usize) -> usize {
    let blocks = frame_size / 8;
    DESCRIPTOR_HEAD + 3 * blocks * blocks
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_voxels: usize,
    pub frames_per_clip: usize,
    pub frame_size: usize,
    /// Maximum |velocity| per axis in pixels per frame (block units when
    /// `block_aligned` is set).
    pub max_speed: i32,
    /// Snap geometry and motion to the 8-pixel tokenizer grid so clips live
    /// exactly in the toy tokenizer's range.
    pub block_aligned: bool,
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            name: "synthetic".into(),
            n_train: 500,
            n_test: 100,
            n_voxels: 512,
            frames_per_clip: 8,
            frame_size: 64,
            max_speed: 2,
            block_aligned: false,
            noise_level: 0.0,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
    Cross,
}

impl ShapeKind {
    pub fn from_index(i: usize) -> ShapeKind {
        match i {
            0 => ShapeKind::Square,
            1 => ShapeKind::Circle,
            2 => ShapeKind::Triangle,
            _ => ShapeKind::Cross,
        }
    }

    pub fn index(self) -> usize {
        match self {
            ShapeKind::Square => 0,
            ShapeKind::Circle => 1,
            ShapeKind::Triangle => 2,
            ShapeKind::Cross => 3,
        }
    }

    pub fn name(self) -> &'static str {
        SHAPES[self.index()]
    }
}

/// Ground truth for one sample.
#[derive(Debug, Clone)]
pub struct Scene {
    pub shape: ShapeKind,
    pub color_idx: usize,
    pub center0: (f64, f64),
    pub radius: f64,
    pub velocity: (i32, i32),
}

impl Scene {
    pub fn color(&self) -> [f64; 3] {
        PALETTE[self.color_idx].1
    }

    pub fn color_name(&self) -> &'static str {
        PALETTE[self.color_idx].0
    }

    /// Scene code: motion, size and appearance summary plus the per-block
    /// mean color of the rendered first frame.
    pub fn descriptor(&self, frame0: &[f64], frame_size: usize) -> Vec<f64> {
        let s = frame_size as f64;
        let mut d = vec![
            self.velocity.0 as f64 / 4.0,
            self.velocity.1 as f64 / 4.0,
            self.radius / s,
        ];
        d.extend_from_slice(&self.color());
        let mut onehot = vec![0.0; SHAPES.len()];
        onehot[self.shape.index()] = 1.0;
        d.extend_from_slice(&onehot);
        let blocks = frame_size / 8;
        for ch in 0..3 {
            for by in 0..blocks {
                for bx in 0..blocks {
                    let mut acc = 0.0;
                    for y in by * 8..(by + 1) * 8 {
                        for x in bx * 8..(bx + 1) * 8 {
                            acc += frame0[(ch * frame_size + y) * frame_size + x];
                        }
                    }
                    d.push(acc / 64.0);
                }
            }
        }
        d
    }

    pub fn caption(&self) -> String {
        let dir = direction_word(self.velocity);
        if dir == "still" {
            format!("a {} {} staying still", self.color_name(), self.shape.name())
        } else {
            format!("a {} {} moving {}", self.color_name(), self.shape.name(), dir)
        }
    }
}

pub fn direction_word(v: (i32, i32)) -> &'static str {
    match (v.0.signum(), v.1.signum()) {
        (0, 0) => "still",
        (1, 0) => "right",
        (-1, 0) => "left",
        (0, -1) => "up",
        (0, 1) => "down",
        (1, -1) => "up-right",
        (-1, -1) => "up-left",
        (1, 1) => "down-right",
        (-1, 1) => "down-left",
        _ => unreachable!(),
    }
}

/// Signed distance to the shape boundary (negative inside), in pixels.
fn shape_dist(kind: ShapeKind, dx: f64, dy: f64, r: f64) -> f64 {
    match kind {
        ShapeKind::Square => dx.abs().max(dy.abs()) - r,
        ShapeKind::Circle => (dx * dx + dy * dy).sqrt() - r,
        ShapeKind::Triangle => {
            // Upward triangle: base at y = +r, apex at y = -r.
            let below_base = dy - r;
            // Side half-planes of slope 2 (apex angle fixed by r).
            let left = -2.0 * dx - dy - r * 0.8;
            let right = 2.0 * dx - dy - r * 0.8;
            below_base.max(left.max(right)) * 0.5
        }
        ShapeKind::Cross => {
            // Union of a horizontal and a vertical bar.
            let arm = r * 0.3;
            let h = (dy.abs() - arm).max(dx.abs() - r);
            let v = (dx.abs() - arm).max(dy.abs() - r);
            h.min(v)
        }
    }
}

/// Render one frame into a h x w canvas. Soft anti-aliased edges by
/// default; block-aligned scenes paint whole 8x8 cells instead.
pub(crate) fn render_frame(
    scene: &Scene,
    center: (f64, f64),
    radius: f64,
    h: usize,
    w: usize,
    block_aligned: bool,
    out: &mut [f64],
) {
    let color = scene.color();
    if block_aligned {
        // Paint whole 8x8 cells: evaluate the shape at cell centers on the
        // block grid (geometry is expressed in block units * 8).
        for by in 0..h / 8 {
            for bx in 0..w / 8 {
                let cx = bx as f64 * 8.0 + 4.0;
                let cy = by as f64 * 8.0 + 4.0;
                let d = shape_dist(scene.shape, cx - center.0, cy - center.1, radius);
                if d <= 0.0 {
                    for ch in 0..3 {
                        for y in by * 8..(by + 1) * 8 {
                            for x in bx * 8..(bx + 1) * 8 {
                                out[(ch * h + y) * w + x] = color[ch];
                            }
                        }
                    }
                }
            }
        }
    } else {
        let aa = 1.0;
        let pad = radius + 2.0;
        let y_lo = ((center.1 - pad).floor().max(0.0)) as usize;
        let y_hi = ((center.1 + pad).ceil().min((h - 1) as f64)) as usize;
        let x_lo = ((center.0 - pad).floor().max(0.0)) as usize;
        let x_hi = ((center.0 + pad).ceil().min((w - 1) as f64)) as usize;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let d = shape_dist(
                    scene.shape,
                    x as f64 + 0.5 - center.0,
                    y as f64 + 0.5 - center.1,
                    radius,
                );
                let cov = (0.5 - d / aa).clamp(0.0, 1.0);
                if cov > 0.0 {
                    for ch in 0..3 {
                        out[(ch * h + y) * w + x] = color[ch] * cov;
                    }
                }
            }
        }
    }
}

/// Render the full clip and quantize to the 8-bit disk precision so that the
/// in-memory pixels equal what a round trip through storage yields.
pub fn render_clip(scene: &Scene, sample_id: usize, cfg: &SyntheticConfig) -> VideoClip {
    let size = cfg.frame_size;
    let mut clip = VideoClip::new(sample_id, cfg.frames_per_clip, size, size);
    for j in 0..cfg.frames_per_clip {
        let center = (
            scene.center0.0 + (j as i32 * scene.velocity.0) as f64,
            scene.center0.1 + (j as i32 * scene.velocity.1) as f64,
        );
        render_frame(
            scene,
            center,
            scene.radius,
            size,
            size,
            cfg.block_aligned,
            clip.frame_mut(j),
        );
    }
    for p in clip.pixels.iter_mut() {
        *p = (*p * 255.0).round() / 255.0;
    }
    clip.caption = scene.caption();
    clip
}

fn sample_scene(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Scene {
    let size = cfg.frame_size as f64;
    let f = cfg.frames_per_clip as f64;
    let shape = ShapeKind::from_index(rng.gen_range(0..SHAPES.len()));
    let color_idx = rng.gen_range(0..PALETTE.len());
    let (radius, velocity, center0);
    if cfg.block_aligned {
        // Geometry in block units of 8 px.
        let r_blocks = rng.gen_range(1..=2);
        radius = (r_blocks * 8) as f64;
        let mut v;
        loop {
            v = (rng.gen_range(-1..=1i32), rng.gen_range(-1..=1i32));
            if v != (0, 0) {
                break;
            }
        }
        velocity = (v.0 * 8, v.1 * 8);
        let travel = ((f - 1.0) * 8.0) as i32;
        let margin = radius as i32 + 8;
        let lo_x = margin + if velocity.0 < 0 { travel } else { 0 };
        let hi_x = cfg.frame_size as i32 - margin - if velocity.0 > 0 { travel } else { 0 };
        let lo_y = margin + if velocity.1 < 0 { travel } else { 0 };
        let hi_y = cfg.frame_size as i32 - margin - if velocity.1 > 0 { travel } else { 0 };
        let bx = rng.gen_range(lo_x / 8..=(hi_x / 8).max(lo_x / 8));
        let by = rng.gen_range(lo_y / 8..=(hi_y / 8).max(lo_y / 8));
        center0 = ((bx * 8) as f64, (by * 8) as f64);
    } else {
        let travel_room = (f - 1.0) * cfg.max_speed as f64;
        let r_hi = (size * 0.22).min((size - travel_room - 6.0) / 2.0 - 2.0);
        let r_lo = (size * 0.14).min(r_hi * 0.7);
        assert!(r_hi > 3.0, "frame_size too small for the configured motion range");
        radius = rng.gen_range(r_lo..r_hi);
        let mut v;
        loop {
            v = (
                rng.gen_range(-cfg.max_speed..=cfg.max_speed),
                rng.gen_range(-cfg.max_speed..=cfg.max_speed),
            );
            if v != (0, 0) {
                break;
            }
        }
        velocity = v;
        let travel_x = (f - 1.0) * velocity.0.abs() as f64;
        let travel_y = (f - 1.0) * velocity.1.abs() as f64;
        let margin = radius + 2.0;
        let lo_x = margin + if velocity.0 < 0 { travel_x } else { 0.0 };
        let hi_x = size - margin - if velocity.0 > 0 { travel_x } else { 0.0 };
        let lo_y = margin + if velocity.1 < 0 { travel_y } else { 0.0 };
        let hi_y = size - margin - if velocity.1 > 0 { travel_y } else { 0.0 };
        center0 = (rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y));
    }
    Scene { shape, color_idx, center0, radius, velocity }
}

/// Draw n scene specs from the configured families.
pub(crate) fn sample_scenes(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, n: usize) -> Vec<Scene> {
    (0..n).map(|_| sample_scene(rng, cfg)).collect()
}

/// Generator output that tests often want in memory before it hits disk.
pub struct SyntheticSplit {
    pub scenes: Vec<Scene>,
    pub clips: Vec<VideoClip>,
    /// Raw (pre z-score) voxel responses.
    pub fmri: Mat,
    pub descriptors: Mat,
}

fn build_split(
    rng: &mut ChaCha8Rng,
    cfg: &SyntheticConfig,
    n: usize,
    w_true: &Mat,
) -> SyntheticSplit {
    let dim = descriptor_dim(cfg.frame_size);
    let mut scenes = Vec::with_capacity(n);
    let mut clips = Vec::with_capacity(n);
    let mut fmri = Mat::zeros(n, cfg.n_voxels);
    let mut descriptors = Mat::zeros(n, dim);
    for i in 0..n {
        let scene = sample_scene(rng, cfg);
        let clip = render_clip(&scene, i, cfg);
        let desc = scene.descriptor(clip.frame(0), cfg.frame_size);
        descriptors.row_mut(i).copy_from_slice(&desc);
        let desc_mat = Mat::from_vec(dim, 1, desc);
        let response = crate::tensor::matmul(w_true, false, &desc_mat, false);
        for (dst, &src) in fmri.row_mut(i).iter_mut().zip(response.data.iter()) {
            *dst = src + cfg.noise_level * rng.sample::<f64, _>(rand_distributions::StandardNormal);
        }
        clips.push(clip);
        scenes.push(scene);
    }
    SyntheticSplit { scenes, clips, fmri, descriptors }
}

mod rand_distributions {
    use rand::distributions::Distribution;
    use rand::Rng;

    /// Box-Muller standard normal; avoids an extra dependency.
    pub struct StandardNormal;

    impl Distribution<f64> for StandardNormal {
        fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen::<f64>();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        }
    }
}

pub use rand_distributions::StandardNormal;

fn base_manifest(cfg: &SyntheticConfig, split: Split, n: usize) -> DatasetManifest {
    DatasetManifest {
        name: cfg.name.clone(),
        split,
        n_samples: n,
        n_voxels: cfg.n_voxels,
        frames_per_clip: cfg.frames_per_clip,
        frame_hz: 4.0,
        frame_size: (cfg.frame_size, cfg.frame_size),
        lag_seconds: 4.0,
        tr_seconds: 2.0,
        captions: String::new(),
        paths: Default::default(),
    }
}

/// Generate both splits under `out_dir/{train,test}`. Voxels are z-scored
/// with training statistics; the mixing matrix, per-sample descriptors and
/// the z-score statistics are persisted alongside.
pub fn generate_synthetic_dataset(
    cfg: &SyntheticConfig,
    out_dir: &Path,
) -> Result<(DatasetManifest, DatasetManifest)> {
    if cfg.n_train == 0 || cfg.n_test == 0 || cfg.n_voxels == 0 {
        return Err(CoreError::invalid("synthetic config has degenerate sizes"));
    }
    if cfg.frame_size < 16 || cfg.frame_size % 8 != 0 {
        return Err(CoreError::invalid(
            "frame_size must be a multiple of 8 and at least 16",
        ));
    }
    if cfg.frames_per_clip < 2 {
        return Err(CoreError::invalid("frames_per_clip must be >= 2"));
    }
    if cfg.block_aligned && cfg.frame_size < 16 * cfg.frames_per_clip {
        return Err(CoreError::invalid(
            "block-aligned scenes need frame_size >= 16 * frames_per_clip for motion room",
        ));
    }

    let dim = descriptor_dim(cfg.frame_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_true = Mat::zeros(cfg.n_voxels, dim);
    let scale = 1.0 / (dim as f64).sqrt();
    for v in w_true.data.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal) * scale;
    }

    let mut train = build_split(&mut rng, cfg, cfg.n_train, &w_true);
    let mut test = build_split(&mut rng, cfg, cfg.n_test, &w_true);

    let stats = ZScoreStats::fit(&train.fmri);
    stats.apply(&mut train.fmri);
    stats.apply(&mut test.fmri);

    let train_manifest = save_split(
        &out_dir.join(Split::Train.dir_name()),
        base_manifest(cfg, Split::Train, cfg.n_train),
        &train.fmri,
        &train.clips,
        &[
            ("descriptor", vec![cfg.n_train, dim], train.descriptors.data.clone()),
            ("w_true", vec![cfg.n_voxels, dim], w_true.data.clone()),
            ("zstats", vec![2, cfg.n_voxels], stats.flat()),
        ],
    )?;
    let test_manifest = save_split(
        &out_dir.join(Split::Test.dir_name()),
        base_manifest(cfg, Split::Test, cfg.n_test),
        &test.fmri,
        &test.clips,
        &[(
            "descriptor",
            vec![cfg.n_test, dim],
            test.descriptors.data.clone(),
        )],
    )?;
    Ok((train_manifest, test_manifest))
}

/// In-memory generation used by unit tests and pilots (no disk writes, raw
/// voxels without z-scoring).
pub fn generate_in_memory(cfg: &SyntheticConfig) -> (Mat, SyntheticSplit, SyntheticSplit) {
    let dim = descriptor_dim(cfg.frame_size);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w_true = Mat::zeros(cfg.n_voxels, dim);
    let scale = 1.0 / (dim as f64).sqrt();
    for v in w_true.data.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal) * scale;
    }
    let train = build_split(&mut rng, cfg, cfg.n_train, &w_true);
    let test = build_split(&mut rng, cfg, cfg.n_test, &w_true);
    (w_true, train, test)
}

/// Intensity centroid of one frame; None for an all-black frame.
pub fn frame_centroid(frame: &[f64], h: usize, w: usize) -> Option<(f64, f64)> {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut mass = 0.0;
    for y in 0..h {
        for x in 0..w {
            let lum: f64 = (0..3).map(|ch| frame[(ch * h + y) * w + x]).sum();
            sx += lum * (x as f64 + 0.5);
            sy += lum * (y as f64 + 0.5);
            mass += lum;
        }
    }
    if mass <= 0.0 {
        None
    } else {
        Some((sx / mass, sy / mass))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            n_train: 6,
            n_test: 3,
            n_voxels: 24,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_fmri_is_an_exact_linear_image() {
        let cfg = small_cfg();
        let dim = descriptor_dim(cfg.frame_size);
        let (w_true, train, _) = generate_in_memory(&cfg);
        for i in 0..cfg.n_train {
            let desc = Mat::from_vec(dim, 1, train.descriptors.row(i).to_vec());
            let expect = crate::tensor::matmul(&w_true, false, &desc, false);
            for (a, b) in train.fmri.row(i).iter().zip(expect.data.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn centroid_displacement_matches_velocity() {
        let cfg = small_cfg();
        let (_, train, _) = generate_in_memory(&cfg);
        for (scene, clip) in train.scenes.iter().zip(train.clips.iter()) {
            let mut prev = frame_centroid(clip.frame(0), clip.height, clip.width).unwrap();
            for j in 1..clip.n_frames {
                let cur = frame_centroid(clip.frame(j), clip.height, clip.width).unwrap();
                let dx = cur.0 - prev.0;
                let dy = cur.1 - prev.1;
                assert!(
                    (dx - scene.velocity.0 as f64).abs() < 0.5
                        && (dy - scene.velocity.1 as f64).abs() < 0.5,
                    "frame {} displacement ({dx:.2},{dy:.2}) vs velocity {:?}",
                    j,
                    scene.velocity
                );
                prev = cur;
            }
        }
    }

    #[test]
    fn constant_velocity_means_pure_translation() {
        let cfg = small_cfg();
        let (_, train, _) = generate_in_memory(&cfg);
        let clip = &train.clips[0];
        let scene = &train.scenes[0];
        let (h, w) = (clip.height, clip.width);
        // Frame j equals frame 0 shifted by j*v wherever both are in bounds.
        for j in 1..clip.n_frames {
            let sx = j as i32 * scene.velocity.0;
            let sy = j as i32 * scene.velocity.1;
            for ch in 0..3 {
                for y in 0..h as i32 {
                    for x in 0..w as i32 {
                        let (ox, oy) = (x - sx, y - sy);
                        if ox < 0 || oy < 0 || ox >= w as i32 || oy >= h as i32 {
                            continue;
                        }
                        let a = clip.pixels[clip.idx(j, ch, y as usize, x as usize)];
                        let b = clip.pixels[clip.idx(0, ch, oy as usize, ox as usize)];
                        assert!((a - b).abs() < 1e-12, "motion is not a pure translation");
                    }
                }
            }
        }
    }

    #[test]
    fn regeneration_with_same_seed_is_byte_identical() {
        let cfg = small_cfg();
        let dir1 = std::env::temp_dir().join("mindkit_synth_det_1");
        let dir2 = std::env::temp_dir().join("mindkit_synth_det_2");
        let _ = std::fs::remove_dir_all(&dir1);
        let _ = std::fs::remove_dir_all(&dir2);
        generate_synthetic_dataset(&cfg, &dir1).unwrap();
        generate_synthetic_dataset(&cfg, &dir2).unwrap();
        for split in ["train", "test"] {
            let d1 = dir1.join(split);
            for entry in std::fs::read_dir(&d1).unwrap() {
                let name = entry.unwrap().file_name();
                let b1 = std::fs::read(d1.join(&name)).unwrap();
                let b2 = std::fs::read(dir2.join(split).join(&name)).unwrap();
                assert_eq!(b1, b2, "{split}/{name:?} differs between identical runs");
            }
        }
        let _ = std::fs::remove_dir_all(&dir1);
        let _ = std::fs::remove_dir_all(&dir2);
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let cfg = small_cfg();
        let dir = std::env::temp_dir().join("mindkit_synth_roundtrip");
        let _ = std::fs::remove_dir_all(&dir);
        generate_synthetic_dataset(&cfg, &dir).unwrap();
        let ds = crate::dataio::Dataset::load(&dir.join("train")).unwrap();
        assert_eq!(ds.n_samples(), cfg.n_train);
        let clip = ds.clip(0);
        clip.check(&ds.manifest).unwrap();
        // Pixels were quantized before saving, so the round trip is exact.
        let (_, train, _) = generate_in_memory(&cfg);
        for (a, b) in clip.pixels.iter().zip(train.clips[0].pixels.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(clip.caption, train.clips[0].caption);
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn degenerate_sizes_error() {
        let mut cfg = small_cfg();
        cfg.n_voxels = 0;
        let dir = std::env::temp_dir().join("mindkit_synth_degenerate");
        assert!(generate_synthetic_dataset(&cfg, &dir).is_err());
    }

    #[test]
    fn block_aligned_clips_are_block_constant() {
        let cfg = SyntheticConfig {
            n_train: 4,
            n_test: 2,
            n_voxels: 16,
            frame_size: 128,
            block_aligned: true,
            seed: 9,
            ..Default::default()
        };
        let (_, train, _) = generate_in_memory(&cfg);
        for clip in &train.clips {
            for j in 0..clip.n_frames {
                let frame = clip.frame(j);
                for ch in 0..3 {
                    for by in 0..clip.height / 8 {
                        for bx in 0..clip.width / 8 {
                            let v0 = frame[(ch * clip.height + by * 8) * clip.width + bx * 8];
                            for y in by * 8..(by + 1) * 8 {
                                for x in bx * 8..(bx + 1) * 8 {
                                    assert_eq!(
                                        frame[(ch * clip.height + y) * clip.width + x],
                                        v0,
                                        "block ({bx},{by}) is not constant"
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
