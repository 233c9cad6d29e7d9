//! Semantic decoder: voxels to the shared embedding space and onwards to the
//! generator's text condition, trained with the tri-modal contrastive
//! objective plus the two projection terms.

pub mod augment;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::{self, ArrayMeta};
use crate::dataio::Dataset;
use crate::encoders::{EmbeddingBackend, TextConditioner, CONDITION_COLS, CONDITION_ROWS, EMBED_DIM};
use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::nn::{rng_for, Adam, Linear, LrSchedule, ParamSet};
use crate::semantic::augment::AugmentationPolicy;
use crate::tensor::{normalize, Mat};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Bidirectional InfoNCE over cosine similarities at temperature `tau`:
/// minus the mean of row-wise and column-wise diagonal log-softmax terms.
pub fn build_bi_infonce(g: &mut Graph, zhat: Var, z: Var, tau: Var) -> Var {
    let zh = g.normalize_rows(zhat);
    let zn = g.normalize_rows(z);
    let sims = g.matmul_t(zh, false, zn, true);
    let logits = g.div_scalar(sims, tau);
    let rows = g.log_softmax_rows(logits);
    let row_term = g.diag_mean(rows);
    let logits_t = g.transpose(logits);
    let cols = g.log_softmax_rows(logits_t);
    let col_term = g.diag_mean(cols);
    let total = g.add(row_term, col_term);
    g.scale(total, -1.0)
}

fn check_batch(name: &str, a: &Mat, b: &Mat) -> Result<()> {
    if a.rows == 0 {
        return Err(CoreError::invalid(format!("{name}: empty batch")));
    }
    if (a.rows, a.cols) != (b.rows, b.cols) {
        return Err(CoreError::shape(
            name,
            format!("{}x{}", a.rows, a.cols),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(CoreError::NonFinite(name.into()));
    }
    Ok(())
}

/// Scalar bidirectional InfoNCE (rows of `zhat` and `z` are paired).
pub fn bi_infonce(zhat: &Mat, z: &Mat, tau: f64) -> Result<f64> {
    check_batch("bi_infonce", zhat, z)?;
    if tau <= 0.0 {
        return Err(CoreError::invalid("bi_infonce: tau must be positive"));
    }
    let mut g = Graph::new();
    let zh = g.leaf(zhat.clone());
    let zv = g.leaf(z.clone());
    let tv = g.leaf(Mat::scalar(tau));
    let loss = build_bi_infonce(&mut g, zh, zv, tv);
    Ok(g.scalar_value(loss))
}

/// Tri-modal weighting of the two InfoNCE terms.
pub fn semantic_loss(f: &Mat, t: &Mat, v: &Mat, alpha: f64, tau: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::invalid(format!("alpha {alpha} outside [0,1]")));
    }
    let ft = bi_infonce(f, t, tau)?;
    let fv = bi_infonce(f, v, tau)?;
    Ok(alpha * ft + (1.0 - alpha) * fv)
}

/// Full objective: mean squared f-t distance, weighted tri-modal term,
/// weighted condition regression.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss(
    f: &Mat,
    t: &Mat,
    c_pred: &Mat,
    c_true: &Mat,
    lambda1: f64,
    lambda2: f64,
    alpha: f64,
    v: &Mat,
    tau: f64,
) -> Result<f64> {
    check_batch("combined_loss f/t", f, t)?;
    check_batch("combined_loss c", c_pred, c_true)?;
    if f.rows != c_pred.rows {
        return Err(CoreError::shape(
            "combined_loss batch",
            f.rows.to_string(),
            c_pred.rows.to_string(),
        ));
    }
    let proj1 = row_sq_dist(f, t);
    let sem = semantic_loss(f, t, v, alpha, tau)?;
    let proj2 = row_sq_dist(c_pred, c_true);
    Ok(proj1 + lambda1 * sem + lambda2 * proj2)
}

/// Mean over rows of squared L2 row distances.
fn row_sq_dist(a: &Mat, b: &Mat) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.data.iter().zip(b.data.iter()) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.rows as f64
}

// ---------------------------------------------------------------------------
// Decoder state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SemanticConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau_init: f64,
    pub weight_decay: f64,
    pub trunk_hidden: usize,
    pub head_hidden: usize,
    pub val_fraction: f64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig {
            epochs: 100,
            batch_size: 64,
            lr: 2e-4,
            alpha: 0.5,
            lambda1: 0.01,
            lambda2: 0.5,
            tau_init: 0.07,
            weight_decay: 1e-4,
            trunk_hidden: 512,
            head_hidden: 128,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
struct SemanticArch {
    t1: Linear,
    t2: Linear,
    t3: Linear,
    h1: Linear,
    h2: Linear,
    log_tau: usize,
}

fn build_arch(
    params: &mut ParamSet,
    rng: &mut rand_chacha::ChaCha8Rng,
    n_voxels: usize,
    cfg: &SemanticConfig,
) -> SemanticArch {
    let t1 = Linear::init(params, rng, "trunk1", n_voxels, cfg.trunk_hidden);
    let t2 = Linear::init(params, rng, "trunk2", cfg.trunk_hidden, cfg.trunk_hidden);
    let t3 = Linear::init(params, rng, "trunk3", cfg.trunk_hidden, EMBED_DIM);
    let h1 = Linear::init(params, rng, "head1", EMBED_DIM, cfg.head_hidden);
    let h2 = Linear::init(params, rng, "head2", cfg.head_hidden, CONDITION_ROWS * CONDITION_COLS);
    let log_tau = params.register("log_tau", Mat::scalar(cfg.tau_init.ln()));
    SemanticArch { t1, t2, t3, h1, h2, log_tau }
}

pub struct SemanticDecoderState {
    pub config: SemanticConfig,
    pub n_voxels: usize,
    pub params: ParamSet,
    arch: SemanticArch,
}

impl SemanticDecoderState {
    pub fn init(n_voxels: usize, config: SemanticConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, "semantic.init");
        let mut params = ParamSet::new();
        let arch = build_arch(&mut params, &mut rng, n_voxels, &config);
        SemanticDecoderState { config, n_voxels, params, arch }
    }

    pub fn tau(&self) -> f64 {
        self.params.get(self.arch.log_tau).data[0].exp()
    }

    /// Trunk weight matrices in application order, for linearized voxel
    /// attribution.
    pub fn linear_weight_chain(&self) -> Vec<&Mat> {
        vec![
            self.params.get(self.arch.t1.w),
            self.params.get(self.arch.t2.w),
            self.params.get(self.arch.t3.w),
        ]
    }

    /// Mutable access to the final trunk weight (rescaling-invariance tests).
    pub fn last_trunk_weight_mut(&mut self) -> &mut Mat {
        self.params.get_mut(self.arch.t3.w)
    }

    /// Trunk forward on the tape; returns the normalized embedding rows.
    fn trunk_forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let a = self.arch.t1.forward(g, vars, x);
        let a = g.tanh(a);
        let a = self.arch.t2.forward(g, vars, a);
        let a = g.tanh(a);
        let raw = self.arch.t3.forward(g, vars, a);
        g.normalize_rows(raw)
    }

    fn head_forward(&self, g: &mut Graph, vars: &[Var], f: Var) -> Var {
        let b = self.arch.h1.forward(g, vars, f);
        let b = g.tanh(b);
        self.arch.h2.forward(g, vars, b)
    }

    /// Tape-free inference for a batch of voxel rows.
    fn infer_f(&self, x: &Mat) -> Mat {
        let a = self.arch.t1.apply(&self.params, x).map(f64::tanh);
        let a = self.arch.t2.apply(&self.params, &a).map(f64::tanh);
        let mut f = self.arch.t3.apply(&self.params, &a);
        for r in 0..f.rows {
            normalize(f.row_mut(r));
        }
        f
    }

    /// Decode one voxel vector to (unit embedding, 20x768 condition).
    pub fn decode(&self, voxels: &[f64]) -> Result<(Vec<f64>, Mat)> {
        if voxels.len() != self.n_voxels {
            return Err(CoreError::shape(
                "decode_semantic voxels",
                self.n_voxels.to_string(),
                voxels.len().to_string(),
            ));
        }
        let x = Mat::from_vec(1, self.n_voxels, voxels.to_vec());
        let f = self.infer_f(&x);
        let b = self.arch.h1.apply(&self.params, &f).map(f64::tanh);
        let c = self.arch.h2.apply(&self.params, &b);
        if !c.is_finite() || !f.is_finite() {
            return Err(CoreError::NonFinite("decode_semantic output".into()));
        }
        Ok((
            f.data,
            Mat::from_vec(CONDITION_ROWS, CONDITION_COLS, c.data),
        ))
    }

    /// Decode embeddings for many samples at once (retrieval, evaluation).
    pub fn decode_embeddings(&self, x: &Mat) -> Result<Mat> {
        if x.cols != self.n_voxels {
            return Err(CoreError::shape(
                "decode_semantic voxels",
                self.n_voxels.to_string(),
                x.cols.to_string(),
            ));
        }
        Ok(self.infer_f(x))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut arrays = BTreeMap::new();
        for (name, value) in self.params.iter() {
            let file_stem = name.replace('.', "_");
            let meta = container::write_f32(
                dir,
                &file_stem,
                &[value.rows, value.cols],
                &value.data,
            )?;
            arrays.insert(name.to_string(), meta);
        }
        let manifest = SemanticStateManifest {
            kind: "semantic".into(),
            n_voxels: self.n_voxels,
            config: self.config.clone(),
            arrays,
        };
        container::save_json(&dir.join("manifest.json"), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: SemanticStateManifest = container::load_json(&dir.join("manifest.json"))?;
        if manifest.kind != "semantic" {
            return Err(CoreError::invalid(format!(
                "state at {} is '{}', expected 'semantic'",
                dir.display(),
                manifest.kind
            )));
        }
        let mut state = SemanticDecoderState::init(manifest.n_voxels, manifest.config, 0);
        load_params(dir, &manifest.arrays, &mut state.params)?;
        Ok(state)
    }
}

#[derive(Serialize, Deserialize)]
struct SemanticStateManifest {
    kind: String,
    n_voxels: usize,
    config: SemanticConfig,
    arrays: BTreeMap<String, ArrayMeta>,
}

/// Fill a freshly built ParamSet from stored arrays, by name.
pub(crate) fn load_params(
    dir: &Path,
    arrays: &BTreeMap<String, ArrayMeta>,
    params: &mut ParamSet,
) -> Result<()> {
    for i in 0..params.len() {
        let name = params.names()[i].clone();
        let meta = arrays
            .get(&name)
            .ok_or_else(|| CoreError::invalid(format!("stored state missing array '{name}'")))?;
        let data = container::read_f32(dir, meta)?;
        let target = params.get_mut(i);
        if data.len() != target.len() {
            return Err(CoreError::shape(
                format!("state array {name}"),
                target.len().to_string(),
                data.len().to_string(),
            ));
        }
        target.data = data;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct SemanticTrainOutput {
    pub state: SemanticDecoderState,
    pub history: Vec<EpochLoss>,
    pub val_indices: Vec<usize>,
}

/// Train the semantic decoder on one dataset split. The last
/// `val_fraction` of samples are held out for the validation loss.
pub fn train_semantic(
    dataset: &Dataset,
    embedder: &dyn EmbeddingBackend,
    conditioner: &dyn TextConditioner,
    config: &SemanticConfig,
    policy: &AugmentationPolicy,
    seed: u64,
) -> Result<SemanticTrainOutput> {
    let n = dataset.n_samples();
    let n_voxels = dataset.manifest.n_voxels;
    let n_val = ((n as f64) * config.val_fraction).ceil() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(CoreError::invalid("train_semantic: no training samples"));
    }

    // Clean targets, computed once.
    let mut t_clean = Mat::zeros(n, EMBED_DIM);
    let mut v_clean = Mat::zeros(n, EMBED_DIM);
    let mut c_clean = Mat::zeros(n, CONDITION_ROWS * CONDITION_COLS);
    for i in 0..n {
        let clip = dataset.clip(i);
        t_clean.row_mut(i).copy_from_slice(&embedder.embed_text(&clip.caption));
        v_clean.row_mut(i).copy_from_slice(&embedder.embed_video(&clip));
        c_clean.row_mut(i).copy_from_slice(&conditioner.condition(&clip.caption).data);
    }

    let mut state = SemanticDecoderState::init(n_voxels, config.clone(), seed);
    let mut opt = Adam::new(
        &state.params,
        LrSchedule::constant(config.lr),
        config.weight_decay,
    );
    let mut history = Vec::with_capacity(config.epochs);

    let val_indices: Vec<usize> = (n_train..n).collect();

    for epoch in 0..config.epochs {
        let mut rng = rng_for(seed, &format!("semantic.epoch{epoch}"));
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();

        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut x = Mat::zeros(b, n_voxels);
            let mut t = Mat::zeros(b, EMBED_DIM);
            let mut v = Mat::zeros(b, EMBED_DIM);
            let mut c = Mat::zeros(b, CONDITION_ROWS * CONDITION_COLS);
            for (row, &i) in chunk.iter().enumerate() {
                let mut voxels = dataset.fmri.row(i).to_vec();
                augment::augment_voxels(&mut voxels, policy, &mut rng);
                x.row_mut(row).copy_from_slice(&voxels);

                let clip = dataset.clip(i);
                let caption = augment::augment_caption(&clip.caption, policy, &mut rng);
                t.row_mut(row).copy_from_slice(&embedder.embed_text(&caption));
                let (crop, ch, cw) = augment::random_crop_frame(&clip, policy, &mut rng);
                v.row_mut(row).copy_from_slice(&embedder.embed_frame(&crop, ch, cw));
                c.row_mut(row).copy_from_slice(c_clean.row(i));
            }

            let mut g = Graph::new();
            let vars = state.params.leaf_all(&mut g);
            let xv = g.leaf(x);
            let tv = g.leaf(t);
            let vv = g.leaf(v);
            let cv = g.leaf(c);
            let loss = build_combined(&state, &mut g, &vars, xv, tv, vv, cv);
            let loss_val = g.scalar_value(loss);
            if !loss_val.is_finite() {
                return Err(CoreError::TrainingAborted(format!(
                    "semantic loss became non-finite at epoch {epoch}"
                )));
            }
            let mut grads = g.backward(loss);
            opt.apply(&mut state.params, &vars, &mut grads);
            epoch_losses.push(loss_val);
        }

        let val_loss = if n_val > 0 {
            eval_combined(&state, dataset, &t_clean, &v_clean, &c_clean, &val_indices)?
        } else {
            f64::NAN
        };
        history.push(EpochLoss {
            epoch,
            train_loss: crate::tensor::mean(&epoch_losses),
            val_loss,
        });
    }

    Ok(SemanticTrainOutput { state, history, val_indices })
}

fn build_combined(
    state: &SemanticDecoderState,
    g: &mut Graph,
    vars: &[Var],
    x: Var,
    t: Var,
    v: Var,
    c_true: Var,
) -> Var {
    let cfg = &state.config;
    let f = state.trunk_forward(g, vars, x);
    let c_pred = state.head_forward(g, vars, f);
    let tau = g.exp(vars[state.arch.log_tau]);

    let proj1 = g.row_sq_dist_mean(f, t);
    let nce_t = build_bi_infonce(g, f, t, tau);
    let nce_v = build_bi_infonce(g, f, v, tau);
    let nce_t = g.scale(nce_t, cfg.alpha);
    let nce_v = g.scale(nce_v, 1.0 - cfg.alpha);
    let sem = g.add(nce_t, nce_v);
    let sem = g.scale(sem, cfg.lambda1);
    let proj2 = g.row_sq_dist_mean(c_pred, c_true);
    let proj2 = g.scale(proj2, cfg.lambda2);
    let partial = g.add(proj1, sem);
    g.add(partial, proj2)
}

fn eval_combined(
    state: &SemanticDecoderState,
    dataset: &Dataset,
    t_clean: &Mat,
    v_clean: &Mat,
    c_clean: &Mat,
    indices: &[usize],
) -> Result<f64> {
    let b = indices.len();
    let n_voxels = dataset.manifest.n_voxels;
    let mut x = Mat::zeros(b, n_voxels);
    let mut t = Mat::zeros(b, EMBED_DIM);
    let mut v = Mat::zeros(b, EMBED_DIM);
    let mut c = Mat::zeros(b, CONDITION_ROWS * CONDITION_COLS);
    for (row, &i) in indices.iter().enumerate() {
        x.row_mut(row).copy_from_slice(dataset.fmri.row(i));
        t.row_mut(row).copy_from_slice(t_clean.row(i));
        v.row_mut(row).copy_from_slice(v_clean.row(i));
        c.row_mut(row).copy_from_slice(c_clean.row(i));
    }
    let f = state.infer_f(&x);
    let b1 = state.arch.h1.apply(&state.params, &f).map(f64::tanh);
    let c_pred = state.arch.h2.apply(&state.params, &b1);
    combined_loss(
        &f,
        &t,
        &c_pred,
        &c,
        state.config.lambda1,
        state.config.lambda2,
        state.config.alpha,
        &v,
        state.tau(),
    )
}

/// Loss history CSV: epoch, train_loss, val_loss.
pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_loss));
    }
    out
}
