//! Next-frame-prediction training for the CMG, plus the per-frame MLP
//! baseline used by the motion ablation.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cmg::mask::{build_mask, MaskMode};
use crate::cmg::model::PackedBatch;
use crate::cmg::{CmgConfig, CmgState, FrameTokens};
use crate::dataio::Dataset;
use crate::encoders::FrameTokenizer;
use crate::error::{CoreError, Result};
use crate::graph::Graph;
use crate::nn::{rng_for, subseed, Adam, Linear, LrSchedule, ParamSet};
use crate::semantic::EpochLoss;
use crate::tensor::Mat;


pub struct CmgTrainOutput {
    pub state: CmgState,
    pub history: Vec<EpochLoss>,
}

fn clip_tokens(dataset: &Dataset, tokenizer: &dyn FrameTokenizer) -> Result<Vec<FrameTokens>> {
    let mut all = Vec::with_capacity(dataset.n_samples());
    for i in 0..dataset.n_samples() {
        let clip = dataset.clip(i);
        let latents = tokenizer.encode_clip(&clip)?;
        let frames: Result<FrameTokens> =
            latents.iter().map(|l| tokenizer.tokenize(l)).collect();
        all.push(frames?);
    }
    Ok(all)
}

/// Train with a uniformly sampled visible prefix per example and a fresh
/// random sparse causal mask per batch.
pub fn train_cmg(
    dataset: &Dataset,
    tokenizer: &dyn FrameTokenizer,
    config: &CmgConfig,
    seed: u64,
) -> Result<CmgTrainOutput> {
    config.validate()?;
    let n = dataset.n_samples();
    let n_frames = dataset.manifest.frames_per_clip;
    let (h, w) = dataset.manifest.frame_size;
    let t_pf = tokenizer.tokens_per_frame(h, w);
    let d_token = tokenizer.token_dim();
    let n_voxels = dataset.manifest.n_voxels;

    let tokens = clip_tokens(dataset, tokenizer)?;
    let n_val = (((n as f64) * config.val_fraction).ceil() as usize).min(n.saturating_sub(1));
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(CoreError::invalid("train_cmg: no training samples"));
    }

    let mut state = CmgState::init(n_voxels, n_frames, t_pf, d_token, config.clone(), seed)?;
    let mut opt = Adam::new(
        &state.params,
        LrSchedule::with_warmup(config.lr, config.warmup_steps),
        config.weight_decay,
    );
    let mut history = Vec::with_capacity(config.epochs);
    let mut initial_loss: Option<f64> = None;

    for epoch in 0..config.epochs {
        let mut rng = rng_for(seed, &format!("cmg.epoch{epoch}"));
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        let mut epoch_losses = Vec::new();

        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let b = chunk.len();
            let p = n_frames * t_pf;
            let mask_seed = subseed(seed, &format!("cmg.mask.{epoch}.{batch_idx}"));
            let mask = build_mask(n_frames, t_pf, config.mask_ratio, MaskMode::Train, mask_seed)?;

            let mut packed_tokens = Mat::zeros(b * p, d_token);
            let mut target_tokens = Mat::zeros(b * p, d_token);
            let mut real_rows = vec![false; b * p];
            let mut fmri = Mat::zeros(b, n_voxels);
            let mut prefixes = Vec::with_capacity(b);
            for (bi, &i) in chunk.iter().enumerate() {
                let m = rng.gen_range(1..n_frames);
                prefixes.push(m);
                fmri.row_mut(bi).copy_from_slice(dataset.fmri.row(i));
                for j in 0..n_frames {
                    for t in 0..t_pf {
                        let r = (bi * n_frames + j) * t_pf + t;
                        target_tokens.row_mut(r).copy_from_slice(&tokens[i][j][t]);
                        if j < m {
                            packed_tokens.row_mut(r).copy_from_slice(&tokens[i][j][t]);
                            real_rows[r] = true;
                        }
                    }
                }
            }

            let batch = PackedBatch {
                tokens: packed_tokens,
                real_rows,
                fmri,
                n_in: n_frames,
                b,
            };
            let mut g = Graph::new();
            let vars = state.params.leaf_all(&mut g);
            let out = state.build_forward(&mut g, &vars, &batch, &mask);
            let target_leaf = g.leaf(target_tokens);

            // Loss over each sample's unseen frames only.
            let mut pred_parts = Vec::with_capacity(b);
            let mut target_parts = Vec::with_capacity(b);
            for (bi, &m) in prefixes.iter().enumerate() {
                let from = (bi * n_frames + m) * t_pf;
                let to = (bi + 1) * n_frames * t_pf;
                pred_parts.push(g.slice_rows(out, from, to));
                target_parts.push(g.slice_rows(target_leaf, from, to));
            }
            let pred = g.concat_rows(&pred_parts);
            let target = g.concat_rows(&target_parts);
            let loss = g.mse(pred, target);
            let loss_val = g.scalar_value(loss);
            if !loss_val.is_finite() {
                return Err(CoreError::TrainingAborted(format!(
                    "cmg loss became non-finite at epoch {epoch}"
                )));
            }
            let initial = *initial_loss.get_or_insert(loss_val.max(1e-12));
            if loss_val > 1e3 * initial {
                return Err(CoreError::TrainingAborted(format!(
                    "cmg diverged at epoch {epoch}: loss {loss_val:.3e} vs initial {initial:.3e}"
                )));
            }
            let mut grads = g.backward(loss);
            opt.apply(&mut state.params, &vars, &mut grads);
            epoch_losses.push(loss_val);
        }

        let val_loss = if n_val > 0 {
            eval_cmg(&state, dataset, &tokens, n_train..n)?
        } else {
            f64::NAN
        };
        history.push(EpochLoss {
            epoch,
            train_loss: crate::tensor::mean(&epoch_losses),
            val_loss,
        });
    }

    Ok(CmgTrainOutput { state, history })
}

/// Deterministic validation: visible prefix cycles 1..n-1 over samples,
/// inference mask, mean squared error over the hidden frames.
pub fn eval_cmg(
    state: &CmgState,
    dataset: &Dataset,
    tokens: &[FrameTokens],
    range: std::ops::Range<usize>,
) -> Result<f64> {
    let n_frames = state.n_frames;
    let mask = build_mask(n_frames, state.tokens_per_frame, 0.0, MaskMode::Inference, 0)?;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (ord, i) in range.enumerate() {
        let m = 1 + ord % (n_frames - 1);
        let visible: FrameTokens = tokens[i][..m].to_vec();
        let pred = state.forward(&visible, dataset.fmri.row(i), n_frames, &mask)?;
        for (jf, frame) in pred.iter().enumerate() {
            let truth = &tokens[i][m + jf];
            for (pt, tt) in frame.iter().zip(truth.iter()) {
                for (a, b) in pt.iter().zip(tt.iter()) {
                    let d = a - b;
                    acc += d * d;
                    count += 1;
                }
            }
        }
    }
    Ok(acc / count as f64)
}

// ---------------------------------------------------------------------------
// Per-frame MLP baseline (the "no inter-frame parameters" arm)
// ---------------------------------------------------------------------------

/// One independent two-layer MLP per frame index, each mapping the voxel
/// vector straight to that frame's tokens.
pub struct PerFrameMlp {
    pub n_voxels: usize,
    pub n_frames: usize,
    pub tokens_per_frame: usize,
    pub d_token: usize,
    pub params: ParamSet,
    arch: Vec<(Linear, Linear)>,
}

impl PerFrameMlp {
    pub fn init(
        n_voxels: usize,
        n_frames: usize,
        tokens_per_frame: usize,
        d_token: usize,
        hidden: usize,
        seed: u64,
    ) -> Self {
        let mut rng = rng_for(seed, "per_frame_mlp.init");
        let mut params = ParamSet::new();
        let arch = (0..n_frames)
            .map(|j| {
                let l1 = Linear::init(&mut params, &mut rng, &format!("frame{j}.fc1"), n_voxels, hidden);
                let l2 = Linear::init(
                    &mut params,
                    &mut rng,
                    &format!("frame{j}.fc2"),
                    hidden,
                    tokens_per_frame * d_token,
                );
                (l1, l2)
            })
            .collect();
        PerFrameMlp { n_voxels, n_frames, tokens_per_frame, d_token, params, arch }
    }

    pub fn predict_frame(&self, voxels: &[f64], frame: usize) -> Result<Vec<Vec<f64>>> {
        if voxels.len() != self.n_voxels {
            return Err(CoreError::shape(
                "per_frame_mlp voxels",
                self.n_voxels.to_string(),
                voxels.len().to_string(),
            ));
        }
        let (l1, l2) = &self.arch[frame];
        let x = Mat::from_vec(1, self.n_voxels, voxels.to_vec());
        let h = l1.apply(&self.params, &x).map(f64::tanh);
        let out = l2.apply(&self.params, &h);
        Ok(out
            .data
            .chunks(self.d_token)
            .map(|c| c.to_vec())
            .collect())
    }
}

/// Train the baseline with the same budget knobs as the CMG.
pub fn train_per_frame_mlp(
    dataset: &Dataset,
    tokenizer: &dyn FrameTokenizer,
    hidden: usize,
    config: &CmgConfig,
    seed: u64,
) -> Result<PerFrameMlp> {
    let n = dataset.n_samples();
    let n_frames = dataset.manifest.frames_per_clip;
    let (h, w) = dataset.manifest.frame_size;
    let t_pf = tokenizer.tokens_per_frame(h, w);
    let d_token = tokenizer.token_dim();
    let tokens = clip_tokens(dataset, tokenizer)?;
    let n_val = (((n as f64) * config.val_fraction).ceil() as usize).min(n.saturating_sub(1));
    let n_train = n - n_val;

    let mut model = PerFrameMlp::init(
        dataset.manifest.n_voxels,
        n_frames,
        t_pf,
        d_token,
        hidden,
        seed,
    );
    let mut opt = Adam::new(
        &model.params,
        LrSchedule::with_warmup(config.lr, config.warmup_steps),
        config.weight_decay,
    );

    for epoch in 0..config.epochs {
        let mut rng = rng_for(seed, &format!("per_frame_mlp.epoch{epoch}"));
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let mut x = Mat::zeros(b, model.n_voxels);
            for (bi, &i) in chunk.iter().enumerate() {
                x.row_mut(bi).copy_from_slice(dataset.fmri.row(i));
            }
            let mut g = Graph::new();
            let vars = model.params.leaf_all(&mut g);
            let xv = g.leaf(x);
            let mut frame_losses = Vec::with_capacity(n_frames);
            for j in 0..n_frames {
                let mut y = Mat::zeros(b, t_pf * d_token);
                for (bi, &i) in chunk.iter().enumerate() {
                    let row = y.row_mut(bi);
                    for (t, tok) in tokens[i][j].iter().enumerate() {
                        row[t * d_token..(t + 1) * d_token].copy_from_slice(tok);
                    }
                }
                let (l1, l2) = &model.arch[j];
                let hmid = l1.forward(&mut g, &vars, xv);
                let hmid = g.tanh(hmid);
                let pred = l2.forward(&mut g, &vars, hmid);
                let yv = g.leaf(y);
                frame_losses.push(g.mse(pred, yv));
            }
            let mut loss = frame_losses[0];
            for &fl in &frame_losses[1..] {
                loss = g.add(loss, fl);
            }
            let loss = g.scale(loss, 1.0 / n_frames as f64);
            let lv = g.scalar_value(loss);
            if !lv.is_finite() {
                return Err(CoreError::TrainingAborted(format!(
                    "per-frame baseline loss became non-finite at epoch {epoch}"
                )));
            }
            let mut grads = g.backward(loss);
            opt.apply(&mut model.params, &vars, &mut grads);
        }
    }
    Ok(model)
}
