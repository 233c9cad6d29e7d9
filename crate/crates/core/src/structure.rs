//! Structure decoder: regresses the first-frame tokenizer latent from the
//! voxel vector with a two-layer perceptron and plain MSE.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::{self, ArrayMeta};
use crate::dataio::Dataset;
use crate::encoders::FrameTokenizer;
use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::nn::{rng_for, Adam, Linear, LrSchedule, ParamSet};
use crate::semantic::{load_params, EpochLoss};
use crate::tensor::Mat;

/// Mean squared error between predicted and target latents.
pub fn structure_loss(pred: &Mat, target: &Mat) -> Result<f64> {
    if (pred.rows, pred.cols) != (target.rows, target.cols) {
        return Err(CoreError::shape(
            "structure_loss",
            format!("{}x{}", target.rows, target.cols),
            format!("{}x{}", pred.rows, pred.cols),
        ));
    }
    if pred.rows == 0 {
        return Err(CoreError::invalid("structure_loss: empty batch"));
    }
    let mut acc = 0.0;
    for (a, b) in pred.data.iter().zip(target.data.iter()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / pred.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub hidden: usize,
    pub weight_decay: f64,
    pub val_fraction: f64,
}

impl Default for StructureConfig {
    fn default() -> Self {
        StructureConfig {
            epochs: 100,
            batch_size: 64,
            lr: 1e-6,
            warmup_steps: 50,
            hidden: 256,
            weight_decay: 1e-4,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct StructureArch {
    l1: Linear,
    l2: Linear,
}

pub struct StructureDecoderState {
    pub config: StructureConfig,
    pub n_voxels: usize,
    /// Flattened latent length (3 * h/8 * w/8) and the latent plane dims.
    pub latent_len: usize,
    pub latent_dims: (usize, usize, usize),
    pub params: ParamSet,
    arch: StructureArch,
}

impl StructureDecoderState {
    pub fn init(
        n_voxels: usize,
        latent_dims: (usize, usize, usize),
        config: StructureConfig,
        seed: u64,
    ) -> Self {
        let latent_len = latent_dims.0 * latent_dims.1 * latent_dims.2;
        let mut rng = rng_for(seed, "structure.init");
        let mut params = ParamSet::new();
        let l1 = Linear::init(&mut params, &mut rng, "fc1", n_voxels, config.hidden);
        let l2 = Linear::init(&mut params, &mut rng, "fc2", config.hidden, latent_len);
        StructureDecoderState {
            config,
            n_voxels,
            latent_len,
            latent_dims,
            params,
            arch: StructureArch { l1, l2 },
        }
    }

    /// Decode one voxel vector to the first-frame latent.
    pub fn decode(&self, voxels: &[f64]) -> Result<Vec<f64>> {
        if voxels.len() != self.n_voxels {
            return Err(CoreError::shape(
                "decode_structure voxels",
                self.n_voxels.to_string(),
                voxels.len().to_string(),
            ));
        }
        let x = Mat::from_vec(1, self.n_voxels, voxels.to_vec());
        let h = self.arch.l1.apply(&self.params, &x).map(f64::tanh);
        let out = self.arch.l2.apply(&self.params, &h);
        Ok(out.data)
    }

    /// Weight matrices in application order, for linearized voxel attribution.
    pub fn linear_weight_chain(&self) -> Vec<&Mat> {
        vec![self.params.get(self.arch.l1.w), self.params.get(self.arch.l2.w)]
    }

    /// Mutable access to the final weight (rescaling-invariance tests).
    pub fn last_layer_weight_mut(&mut self) -> &mut Mat {
        self.params.get_mut(self.arch.l2.w)
    }

    pub fn decode_batch(&self, x: &Mat) -> Result<Mat> {
        if x.cols != self.n_voxels {
            return Err(CoreError::shape(
                "decode_structure voxels",
                self.n_voxels.to_string(),
                x.cols.to_string(),
            ));
        }
        let h = self.arch.l1.apply(&self.params, x).map(f64::tanh);
        Ok(self.arch.l2.apply(&self.params, &h))
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
        let manifest = StructureStateManifest {
            kind: "structure".into(),
            n_voxels: self.n_voxels,
            latent_dims: self.latent_dims,
            config: self.config.clone(),
            arrays,
        };
        container::save_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: StructureStateManifest = container::load_json(&dir.join("manifest.json"))?;
        if manifest.kind != "structure" {
            return Err(CoreError::invalid(format!(
                "state at {} is '{}', expected 'structure'",
                dir.display(),
                manifest.kind
            )));
        }
        let mut state = StructureDecoderState::init(
            manifest.n_voxels,
            manifest.latent_dims,
            manifest.config,
            0,
        );
        load_params(dir, &manifest.arrays, &mut state.params)?;
        Ok(state)
    }
}

#[derive(Serialize, Deserialize)]
struct StructureStateManifest {
    kind: String,
    n_voxels: usize,
    latent_dims: (usize, usize, usize),
    config: StructureConfig,
    arrays: BTreeMap<String, ArrayMeta>,
}

pub struct StructureTrainOutput {
    pub state: StructureDecoderState,
    pub history: Vec<EpochLoss>,
    /// Variance of the validation targets, for MSE-relative checks.
    pub val_target_variance: f64,
}

/// Train against first-frame latents with a linear-warmup schedule.
pub fn train_structure(
    dataset: &Dataset,
    tokenizer: &dyn FrameTokenizer,
    config: &StructureConfig,
    seed: u64,
) -> Result<StructureTrainOutput> {
    let n = dataset.n_samples();
    let n_voxels = dataset.manifest.n_voxels;
    let (h, w) = dataset.manifest.frame_size;
    let dims = (3, h / tokenizer.factor(), w / tokenizer.factor());
    let latent_len = dims.0 * dims.1 * dims.2;

    let mut targets = Mat::zeros(n, latent_len);
    for i in 0..n {
        let clip = dataset.clip(i);
        let latent = tokenizer.encode_frame(clip.frame(0), h, w)?;
        targets.row_mut(i).copy_from_slice(&latent);
    }

    let n_val = (((n as f64) * config.val_fraction).ceil() as usize).min(n.saturating_sub(1));
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(CoreError::invalid("train_structure: no training samples"));
    }

    let mut state = StructureDecoderState::init(n_voxels, dims, config.clone(), seed);
    let mut opt = Adam::new(
        &state.params,
        LrSchedule::with_warmup(config.lr, config.warmup_steps),
        config.weight_decay,
    );
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut rng = rng_for(seed, &format!("structure.epoch{epoch}"));
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut x = Mat::zeros(b, n_voxels);
            let mut y = Mat::zeros(b, latent_len);
            for (row, &i) in chunk.iter().enumerate() {
                x.row_mut(row).copy_from_slice(dataset.fmri.row(i));
                y.row_mut(row).copy_from_slice(targets.row(i));
            }
            let mut g = Graph::new();
            let vars = state.params.leaf_all(&mut g);
            let xv = g.leaf(x);
            let yv = g.leaf(y);
            let h1 = state.arch.l1.forward(&mut g, &vars, xv);
            let h1 = g.tanh(h1);
            let pred = state.arch.l2.forward(&mut g, &vars, h1);
            let loss = g.mse(pred, yv);
            let loss_val = g.scalar_value(loss);
            if !loss_val.is_finite() {
                return Err(CoreError::TrainingAborted(format!(
                    "structure loss became non-finite at epoch {epoch}"
                )));
            }
            let mut grads = g.backward(loss);
            opt.apply(&mut state.params, &vars, &mut grads);
            epoch_losses.push(loss_val);
        }

        let val_loss = if n_val > 0 {
            let mut x = Mat::zeros(n_val, n_voxels);
            let mut y = Mat::zeros(n_val, latent_len);
            for (row, i) in (n_train..n).enumerate() {
                x.row_mut(row).copy_from_slice(dataset.fmri.row(i));
                y.row_mut(row).copy_from_slice(targets.row(i));
            }
            let pred = state.decode_batch(&x)?;
            structure_loss(&pred, &y)?
        } else {
            f64::NAN
        };
        history.push(EpochLoss {
            epoch,
            train_loss: crate::tensor::mean(&epoch_losses),
            val_loss,
        });
    }

    // Variance of validation targets around their mean.
    let val_target_variance = if n_val > 0 {
        let mut mean = vec![0.0; latent_len];
        for i in n_train..n {
            for (m, &t) in mean.iter_mut().zip(targets.row(i).iter()) {
                *m += t;
            }
        }
        for m in mean.iter_mut() {
            *m /= n_val as f64;
        }
        let mut var = 0.0;
        for i in n_train..n {
            for (m, &t) in mean.iter().zip(targets.row(i).iter()) {
                var += (t - m) * (t - m);
            }
        }
        var / (n_val * latent_len) as f64
    } else {
        f64::NAN
    };

    Ok(StructureTrainOutput { state, history, val_target_variance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_latents_have_zero_loss() {
        let a = Mat::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1.0, 3.0]);
        assert_eq!(structure_loss(&a, &a.clone()).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_squared_offset() {
        let a = Mat::zeros(3, 4);
        let b = a.map(|v| v + 1.0);
        assert!((structure_loss(&b, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_pair_matches_elementwise_oracle() {
        let mut rng = rng_for(17, "structure.test");
        let pred = Mat {
            rows: 4,
            cols: 6,
            data: (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        let target = Mat {
            rows: 4,
            cols: 6,
            data: (0..24).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        };
        // Independent double-loop oracle.
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..6 {
                let d = pred.at(i, j) - target.at(i, j);
                acc += d * d;
            }
        }
        let oracle = acc / 24.0;
        let got = structure_loss(&pred, &target).unwrap();
        assert!((got - oracle).abs() < 1e-7);
    }

    #[test]
    fn shape_mismatch_errors() {
        let a = Mat::zeros(2, 3);
        let b = Mat::zeros(3, 2);
        assert!(structure_loss(&a, &b).is_err());
    }

    #[test]
    fn decoded_latent_has_declared_shape_and_is_deterministic() {
        let state = StructureDecoderState::init(32, (3, 8, 8), StructureConfig::default(), 5);
        let voxels: Vec<f64> = (0..32).map(|i| (i as f64) / 32.0).collect();
        let a = state.decode(&voxels).unwrap();
        assert_eq!(a.len(), 3 * 8 * 8);
        let b = state.decode(&voxels).unwrap();
        assert_eq!(a, b);
        assert!(state.decode(&voxels[..31]).is_err());
    }
}
