//! Dataset ingestion and the on-disk dataset contract.
//!
//! A dataset directory holds one split: `manifest.json` plus the arrays it
//! declares (`fmri` as f32, `frames` as 8-bit pixels) and a caption file with
//! one line per sample. Everything downstream consumes this layout.

pub mod preprocess;
pub mod raw;
pub mod synthetic;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::container::{self, ArrayMeta};
use crate::error::{CoreError, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub n_samples: usize,
    pub n_voxels: usize,
    pub frames_per_clip: usize,
    pub frame_hz: f64,
    pub frame_size: (usize, usize),
    pub lag_seconds: f64,
    pub tr_seconds: f64,
    pub captions: String,
    pub paths: BTreeMap<String, ArrayMeta>,
}

impl DatasetManifest {
    pub fn validate(&self, dir: &Path) -> Result<()> {
        if self.n_samples < 1 {
            return Err(CoreError::invalid("manifest: n_samples must be >= 1"));
        }
        if self.frames_per_clip < 2 {
            return Err(CoreError::invalid("manifest: frames_per_clip must be >= 2"));
        }
        for (name, meta) in &self.paths {
            let path = dir.join(&meta.file);
            let len = std::fs::metadata(&path)
                .map_err(|e| CoreError::io(&path, e))?
                .len() as usize;
            let expected = meta.elem_count() * meta.dtype.bytes_per_elem();
            if len != expected {
                return Err(CoreError::Manifest {
                    path,
                    detail: format!(
                        "array '{name}' declares shape {:?} ({expected} bytes) but file has {len}"
                    , meta.shape),
                });
            }
        }
        if !dir.join(&self.captions).exists() {
            return Err(CoreError::Manifest {
                path: dir.join(&self.captions),
                detail: "caption file missing".into(),
            });
        }
        Ok(())
    }
}

/// One preprocessed voxel vector paired to one clip.
#[derive(Debug, Clone)]
pub struct FmriRecord {
    pub sample_id: usize,
    pub voxels: Vec<f64>,
}

impl FmriRecord {
    pub fn check(&self, n_voxels: usize) -> Result<()> {
        if self.voxels.len() != n_voxels {
            return Err(CoreError::shape(
                "FmriRecord",
                n_voxels.to_string(),
                self.voxels.len().to_string(),
            ));
        }
        if !self.voxels.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite("FmriRecord.voxels".into()));
        }
        Ok(())
    }
}

/// Pixel clip: `n_frames` frames of `3 x height x width` values in [0,1].
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub sample_id: usize,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub caption: String,
}

impl VideoClip {
    pub fn new(sample_id: usize, n_frames: usize, height: usize, width: usize) -> Self {
        VideoClip {
            sample_id,
            n_frames,
            height,
            width,
            pixels: vec![0.0; n_frames * 3 * height * width],
            caption: String::new(),
        }
    }

    #[inline]
    pub fn idx(&self, frame: usize, ch: usize, y: usize, x: usize) -> usize {
        ((frame * 3 + ch) * self.height + y) * self.width + x
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        let stride = 3 * self.height * self.width;
        &self.pixels[frame * stride..(frame + 1) * stride]
    }

    pub fn frame_mut(&mut self, frame: usize) -> &mut [f64] {
        let stride = 3 * self.height * self.width;
        &mut self.pixels[frame * stride..(frame + 1) * stride]
    }

    /// Clip with frames re-ordered by `order` (indices into the original).
    pub fn reordered(&self, order: &[usize]) -> VideoClip {
        assert_eq!(order.len(), self.n_frames);
        let mut out = VideoClip::new(self.sample_id, self.n_frames, self.height, self.width);
        out.caption = self.caption.clone();
        for (dst, &src) in order.iter().enumerate() {
            let stride = 3 * self.height * self.width;
            out.pixels[dst * stride..(dst + 1) * stride].copy_from_slice(self.frame(src));
        }
        out
    }

    pub fn check(&self, manifest: &DatasetManifest) -> Result<()> {
        if self.n_frames != manifest.frames_per_clip {
            return Err(CoreError::shape(
                "VideoClip.frames",
                manifest.frames_per_clip.to_string(),
                self.n_frames.to_string(),
            ));
        }
        if self.pixels.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(CoreError::invalid("VideoClip pixels out of [0,1]"));
        }
        Ok(())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }
}

/// Voxel reliability selection: kept indices sorted ascending, Fisher-z scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VoxelSelection {
    pub kept_indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub k: usize,
}

/// A fully loaded split. Pixels stay 8-bit in memory; clips materialize to
/// [0,1] floats on access.
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub fmri: Mat,
    frames_u8: Vec<u8>,
    pub captions: Vec<String>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest: DatasetManifest = container::load_json(&dir.join("manifest.json"))?;
        manifest.validate(dir)?;
        let fmri_meta = manifest
            .paths
            .get("fmri")
            .ok_or_else(|| CoreError::invalid("manifest missing 'fmri' path"))?;
        let frames_meta = manifest
            .paths
            .get("frames")
            .ok_or_else(|| CoreError::invalid("manifest missing 'frames' path"))?;
        let fmri_raw = container::read_f32(dir, fmri_meta)?;
        let fmri = Mat::from_vec(manifest.n_samples, manifest.n_voxels, fmri_raw);
        let frames_u8 = container::read_u8(dir, frames_meta)?;
        let captions = container::read_captions(dir, &manifest.captions, manifest.n_samples)?;
        Ok(Dataset { dir: dir.to_path_buf(), manifest, fmri, frames_u8, captions })
    }

    pub fn n_samples(&self) -> usize {
        self.manifest.n_samples
    }

    pub fn fmri_record(&self, i: usize) -> FmriRecord {
        FmriRecord { sample_id: i, voxels: self.fmri.row(i).to_vec() }
    }

    pub fn clip(&self, i: usize) -> VideoClip {
        let (h, w) = self.manifest.frame_size;
        let f = self.manifest.frames_per_clip;
        let stride = f * 3 * h * w;
        let mut clip = VideoClip::new(i, f, h, w);
        for (dst, &src) in clip
            .pixels
            .iter_mut()
            .zip(self.frames_u8[i * stride..(i + 1) * stride].iter())
        {
            *dst = src as f64 / 255.0;
        }
        clip.caption = self.captions[i].clone();
        clip
    }

    /// Extra declared array (ground-truth descriptors etc), if present.
    pub fn extra_f32(&self, name: &str) -> Result<Vec<f64>> {
        let meta = self
            .paths()
            .get(name)
            .ok_or_else(|| CoreError::invalid(format!("dataset has no array '{name}'")))?;
        container::read_f32(&self.dir, meta)
    }

    pub fn paths(&self) -> &BTreeMap<String, ArrayMeta> {
        &self.manifest.paths
    }
}

/// Write a split directory from in-memory parts.
pub fn save_split(
    dir: &Path,
    mut manifest: DatasetManifest,
    fmri: &Mat,
    clips: &[VideoClip],
    extra_f32: &[(&str, Vec<usize>, Vec<f64>)],
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let n = manifest.n_samples;
    assert_eq!(fmri.rows, n);
    assert_eq!(clips.len(), n);
    let (h, w) = manifest.frame_size;
    let f = manifest.frames_per_clip;

    let fmri_meta = container::write_f32(dir, "fmri", &[n, manifest.n_voxels], &fmri.data)?;
    manifest.paths.insert("fmri".into(), fmri_meta);

    let mut pix = Vec::with_capacity(n * f * 3 * h * w);
    let mut captions = Vec::with_capacity(n);
    for clip in clips {
        pix.extend(clip.to_u8());
        captions.push(clip.caption.clone());
    }
    let frames_meta = container::write_u8(dir, "frames", &[n, f, 3, h, w], &pix)?;
    manifest.paths.insert("frames".into(), frames_meta);

    for (name, shape, data) in extra_f32 {
        let meta = container::write_f32(dir, name, shape, data)?;
        manifest.paths.insert((*name).into(), meta);
    }

    manifest.captions = container::write_captions(dir, "captions", &captions)?;
    container::save_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
