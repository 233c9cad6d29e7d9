//! Consistency Motion Generator: an L-layer transformer that predicts unseen
//! frame tokens from visible frames under sparse causal masking, with fMRI
//! guidance injected in the spatial module.

pub mod mask;
pub mod model;
pub mod train;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, ArrayMeta};
use crate::error::{CoreError, Result};
use crate::nn::{rng_for, Linear, ParamSet};
use crate::semantic::load_params;

pub use mask::{build_mask, MaskMode, SparseCausalMask};

/// Where and how fMRI interacts with the spatial-temporal fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmgVariant {
    /// Default: temporal masked self-attention, spatial fMRI cross-attention.
    CrossAttention,
    /// Spatial adaptive layer norm modulated by the fMRI embedding.
    AdaLn,
    /// fMRI cross-attention moved into the temporal slot.
    TemporalCross,
    /// fMRI adaLN modulation moved into the temporal slot.
    TemporalAdaLn,
}

impl CmgVariant {
    pub fn parse(s: &str) -> Result<CmgVariant> {
        match s {
            "cross_attention" => Ok(CmgVariant::CrossAttention),
            "ada_ln" | "adaln" => Ok(CmgVariant::AdaLn),
            "temporal_cross" => Ok(CmgVariant::TemporalCross),
            "temporal_ada_ln" | "temporal_adaln" => Ok(CmgVariant::TemporalAdaLn),
            _ => Err(CoreError::invalid(format!("unknown CMG variant '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmgConfig {
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    /// Number of fMRI memory tokens produced by the embedding layer.
    pub n_memory: usize,
    pub mask_ratio: f64,
    /// Input tokens are multiplied by this before embedding; the block-DC
    /// tokenizer emits values up to 8, which would saturate the attention
    /// softmax at unit scale.
    #[serde(default = "default_token_scale")]
    pub token_scale: f64,
    pub variant: CmgVariant,
    /// When false the spatial module uses masked self-attention instead of
    /// fMRI cross-attention (the guidance-ablation arm).
    pub fmri_guidance: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub val_fraction: f64,
}

impl Default for CmgConfig {
    fn default() -> Self {
        CmgConfig {
            layers: 4,
            d_model: 64,
            n_heads: 8,
            ffn_hidden: 128,
            n_memory: 4,
            mask_ratio: 0.6,
            token_scale: 0.125,
            variant: CmgVariant::CrossAttention,
            fmri_guidance: true,
            epochs: 300,
            batch_size: 64,
            lr: 4e-5,
            warmup_steps: 50,
            weight_decay: 1e-4,
            val_fraction: 0.1,
        }
    }
}

fn default_token_scale() -> f64 {
    0.125
}

impl CmgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(CoreError::invalid(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(CoreError::invalid(format!(
                "mask_ratio {} outside [0,1)",
                self.mask_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerArch {
    pub t_q: Linear,
    pub t_k: Linear,
    pub t_v: Linear,
    pub t_o: Linear,
    pub s_q: Linear,
    pub s_k: Linear,
    pub s_v: Linear,
    pub s_o: Linear,
    pub ada_scale: Linear,
    pub ada_shift: Linear,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct CmgArch {
    pub embed: Linear,
    pub mask_token: usize,
    pub patch_pos: usize,
    pub fmri_emb: Linear,
    pub layers: Vec<LayerArch>,
    pub head: Linear,
}

pub struct CmgState {
    pub config: CmgConfig,
    pub n_voxels: usize,
    pub n_frames: usize,
    pub tokens_per_frame: usize,
    pub d_token: usize,
    pub params: ParamSet,
    pub(crate) arch: CmgArch,
}

impl CmgState {
    pub fn init(
        n_voxels: usize,
        n_frames: usize,
        tokens_per_frame: usize,
        d_token: usize,
        config: CmgConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "cmg.init");
        let mut params = ParamSet::new();
        let d = config.d_model;
        let embed = Linear::init(&mut params, &mut rng, "embed", d_token, d);
        let mask_token = params.register("mask_token", crate::nn::glorot(&mut rng, 1, d));
        let patch_pos =
            params.register("patch_pos", crate::nn::glorot(&mut rng, tokens_per_frame, d));
        let fmri_emb = Linear::init(&mut params, &mut rng, "fmri_emb", n_voxels, config.n_memory * d);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = |name: &str| format!("layer{l}.{name}");
            layers.push(LayerArch {
                t_q: Linear::init(&mut params, &mut rng, &p("t_q"), d, d),
                t_k: Linear::init(&mut params, &mut rng, &p("t_k"), d, d),
                t_v: Linear::init(&mut params, &mut rng, &p("t_v"), d, d),
                t_o: Linear::init(&mut params, &mut rng, &p("t_o"), d, d),
                s_q: Linear::init(&mut params, &mut rng, &p("s_q"), d, d),
                s_k: Linear::init(&mut params, &mut rng, &p("s_k"), d, d),
                s_v: Linear::init(&mut params, &mut rng, &p("s_v"), d, d),
                s_o: Linear::init(&mut params, &mut rng, &p("s_o"), d, d),
                ada_scale: Linear::init(&mut params, &mut rng, &p("ada_scale"), config.n_memory * d, d),
                ada_shift: Linear::init(&mut params, &mut rng, &p("ada_shift"), config.n_memory * d, d),
                ffn1: Linear::init(&mut params, &mut rng, &p("ffn1"), d, config.ffn_hidden),
                ffn2: Linear::init(&mut params, &mut rng, &p("ffn2"), config.ffn_hidden, d),
            });
        }
        let head = Linear::init(&mut params, &mut rng, "head", d, d_token);
        Ok(CmgState {
            config,
            n_voxels,
            n_frames,
            tokens_per_frame,
            d_token,
            params,
            arch: CmgArch { embed, mask_token, patch_pos, fmri_emb, layers, head },
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut arrays = BTreeMap::new();
        for (name, value) in self.params.iter() {
            let meta = container::write_f32(
                dir,
                &name.replace('.', "_"),
                &[value.rows, value.cols],
                &value.data,
            )?;
            arrays.insert(name.to_string(), meta);
        }
        let manifest = CmgStateManifest {
            kind: "cmg".into(),
            n_voxels: self.n_voxels,
            n_frames: self.n_frames,
            tokens_per_frame: self.tokens_per_frame,
            d_token: self.d_token,
            config: self.config.clone(),
            arrays,
        };
        container::save_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CmgStateManifest = container::load_json(&dir.join("manifest.json"))?;
        if manifest.kind != "cmg" {
            return Err(CoreError::invalid(format!(
                "state at {} is '{}', expected 'cmg'",
                dir.display(),
                manifest.kind
            )));
        }
        let mut state = CmgState::init(
            manifest.n_voxels,
            manifest.n_frames,
            manifest.tokens_per_frame,
            manifest.d_token,
            manifest.config,
            0,
        )?;
        load_params(dir, &manifest.arrays, &mut state.params)?;
        Ok(state)
    }
}

#[derive(Serialize, Deserialize)]
struct CmgStateManifest {
    kind: String,
    n_voxels: usize,
    n_frames: usize,
    tokens_per_frame: usize,
    d_token: usize,
    config: CmgConfig,
    arrays: BTreeMap<String, ArrayMeta>,
}

/// Frames of tokens: frames x tokens_per_frame x d_token.
pub type FrameTokens = Vec<Vec<Vec<f64>>>;

/// Mean squared error over predicted frames, tokens and channels.
pub fn consistency_loss(pred: &FrameTokens, target: &FrameTokens) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(CoreError::shape(
            "consistency_loss frames",
            target.len().to_string(),
            pred.len().to_string(),
        ));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (pf, tf) in pred.iter().zip(target.iter()) {
        if pf.len() != tf.len() {
            return Err(CoreError::shape(
                "consistency_loss tokens",
                tf.len().to_string(),
                pf.len().to_string(),
            ));
        }
        for (pt, tt) in pf.iter().zip(tf.iter()) {
            if pt.len() != tt.len() {
                return Err(CoreError::shape(
                    "consistency_loss token dim",
                    tt.len().to_string(),
                    pt.len().to_string(),
                ));
            }
            for (a, b) in pt.iter().zip(tt.iter()) {
                let d = a - b;
                acc += d * d;
                count += 1;
            }
        }
    }
    Ok(acc / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tokens(
        frames: usize,
        tpf: usize,
        d: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> FrameTokens {
        let mut out = Vec::with_capacity(frames);
        for j in 0..frames {
            let mut frame = Vec::with_capacity(tpf);
            for t in 0..tpf {
                let mut tok = Vec::with_capacity(d);
                for c in 0..d {
                    tok.push(f(j, t, c));
                }
                frame.push(tok);
            }
            out.push(frame);
        }
        out
    }

    #[test]
    fn consistency_loss_trivial_cases() {
        let a = tokens(3, 2, 4, |j, t, c| (j + t + c) as f64);
        assert_eq!(consistency_loss(&a, &a.clone()).unwrap(), 0.0);
        let b = tokens(3, 2, 4, |j, t, c| (j + t + c) as f64 + 0.5);
        assert!((consistency_loss(&b, &a).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn consistency_loss_matches_brute_force_sum() {
        let mut rng = rng_for(3, "cmg.loss.test");
        let a = tokens(4, 3, 5, |_, _, _| rng.gen_range(-1.0..1.0));
        let b = tokens(4, 3, 5, |_, _, _| rng.gen_range(-1.0..1.0));
        let mut acc = 0.0;
        for j in 0..4 {
            for t in 0..3 {
                for c in 0..5 {
                    let d = a[j][t][c] - b[j][t][c];
                    acc += d * d;
                }
            }
        }
        let oracle = acc / (4.0 * 3.0 * 5.0);
        assert!((consistency_loss(&a, &b).unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = tokens(3, 2, 4, |_, _, _| 0.0);
        let b = tokens(2, 2, 4, |_, _, _| 0.0);
        assert!(consistency_loss(&a, &b).is_err());
    }

    #[test]
    fn state_save_load_round_trip() {
        let state = CmgState::init(16, 4, 3, 8, CmgConfig { layers: 2, d_model: 16, n_heads: 4, ffn_hidden: 32, ..Default::default() }, 11).unwrap();
        let dir = std::env::temp_dir().join("mindkit_cmg_state_rt");
        let _ = std::fs::remove_dir_all(&dir);
        state.save(&dir).unwrap();
        let loaded = CmgState::load(&dir).unwrap();
        assert_eq!(loaded.n_frames, 4);
        for i in 0..state.params.len() {
            for (a, b) in state.params.get(i).data.iter().zip(loaded.params.get(i).data.iter()) {
                assert!((*a as f32 - *b as f32).abs() == 0.0, "param {i} changed in round trip");
            }
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
