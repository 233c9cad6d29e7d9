//! Interpretability tooling: the frame-order shuffle test, the fMRI-guidance
//! and motion ablation harnesses, and voxel/ROI importance maps.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cmg::train::{train_cmg, train_per_frame_mlp, PerFrameMlp};
use crate::cmg::{CmgConfig, CmgState};
use crate::dataio::{Dataset, VideoClip};
use crate::encoders::{EmbeddingBackend, FrameTokenizer};
use crate::error::{CoreError, Result};
use crate::evaluation::flow::FlowBackend;
use crate::evaluation::metrics::vifi_score;
use crate::generator::{reconstruct_video, FrameGeneratorBackend, GenerationRequest};
use crate::nn::{rng_for, subseed};
use crate::semantic::SemanticDecoderState;
use crate::structure::StructureDecoderState;
use crate::tensor::{cosine, matmul, Mat};

// ---------------------------------------------------------------------------
// Shuffle test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMetric {
    ClipPcc,
    Epe,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShuffleTestResult {
    pub metric: ShuffleMetric,
    pub n_shuffles: usize,
    pub repeats: usize,
    pub gate: f64,
    /// Sample ids that passed the vifi gate and were tested.
    pub gated_sample_ids: Vec<usize>,
    /// `repeats` rows of per-gated-sample P values.
    pub p_values: Vec<Vec<f64>>,
}

impl ShuffleTestResult {
    pub fn mean_p(&self) -> f64 {
        let total: f64 = self.p_values.iter().flatten().sum();
        let count = self.p_values.iter().map(|r| r.len()).sum::<usize>();
        total / count.max(1) as f64
    }
}

/// Per-ordered-pair score tables so each of the shuffles costs a handful of
/// lookups instead of a full metric pass.
struct PairTables {
    /// mean |F_gt[j] - F_recon[a][b]| per gt pair j and recon pair (a,b).
    epe: Option<Vec<Vec<Vec<f64>>>>,
    /// cosine similarity between recon frame embeddings a and b.
    adj: Option<Vec<Vec<f64>>>,
    n_frames: usize,
}

impl PairTables {
    fn score(&self, order: &[usize]) -> f64 {
        let pairs = self.n_frames - 1;
        if let Some(epe) = &self.epe {
            let mut acc = 0.0;
            for j in 0..pairs {
                acc += epe[j][order[j]][order[j + 1]];
            }
            acc / pairs as f64
        } else if let Some(adj) = &self.adj {
            let mut acc = 0.0;
            for j in 0..pairs {
                acc += adj[order[j]][order[j + 1]];
            }
            acc / pairs as f64
        } else {
            unreachable!()
        }
    }
}

fn epe_tables(
    gt: &VideoClip,
    recon: &VideoClip,
    flow: &dyn FlowBackend,
) -> Result<PairTables> {
    let n = gt.n_frames;
    let (h, w) = (gt.height, gt.width);
    let gt_flows: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..n - 1)
        .map(|j| flow.flow(gt.frame(j), gt.frame(j + 1), h, w))
        .collect();
    let gt_flows = gt_flows?;
    // Flows between every ordered recon frame pair.
    let mut recon_flows: Vec<Vec<Option<(Vec<f64>, Vec<f64>)>>> = vec![vec![None; n]; n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                recon_flows[a][b] =
                    Some(flow.flow(recon.frame(a), recon.frame(b), h, w)?);
            }
        }
    }
    let mut table = vec![vec![vec![0.0; n]; n]; n - 1];
    for (j, gf) in gt_flows.iter().enumerate() {
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    // Identity pair: recon flow is zero everywhere.
                    let mut acc = 0.0;
                    for i in 0..h * w {
                        acc += (gf.0[i] * gf.0[i] + gf.1[i] * gf.1[i]).sqrt();
                    }
                    table[j][a][b] = acc / (h * w) as f64;
                    continue;
                }
                let rf = recon_flows[a][b].as_ref().unwrap();
                let mut acc = 0.0;
                for i in 0..h * w {
                    let du = gf.0[i] - rf.0[i];
                    let dv = gf.1[i] - rf.1[i];
                    acc += (du * du + dv * dv).sqrt();
                }
                table[j][a][b] = acc / (h * w) as f64;
            }
        }
    }
    Ok(PairTables { epe: Some(table), adj: None, n_frames: n })
}

fn adjacency_tables(recon: &VideoClip, embedder: &dyn EmbeddingBackend) -> PairTables {
    let n = recon.n_frames;
    let embeds: Vec<Vec<f64>> = (0..n)
        .map(|j| embedder.embed_frame(recon.frame(j), recon.height, recon.width))
        .collect();
    let mut adj = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            adj[a][b] = cosine(&embeds[a], &embeds[b]);
        }
    }
    PairTables { epe: None, adj: Some(adj), n_frames: n }
}

/// Frame-order permutation test. Only samples whose vifi score strictly
/// exceeds the gate are tested; a shuffle counts (delta = 1) only when it
/// strictly outperforms the original order (lower EPE / higher smoothness).
#[allow(clippy::too_many_arguments)]
pub fn shuffle_test(
    recon_clips: &[VideoClip],
    gt_clips: &[VideoClip],
    metric: ShuffleMetric,
    n_shuffles: usize,
    gate: f64,
    repeats: usize,
    embedder: &dyn EmbeddingBackend,
    flow: &dyn FlowBackend,
    seed: u64,
) -> Result<ShuffleTestResult> {
    if recon_clips.len() != gt_clips.len() || recon_clips.is_empty() {
        return Err(CoreError::invalid("shuffle_test: clip count mismatch"));
    }
    if gt_clips[0].n_frames < 2 {
        return Err(CoreError::invalid("shuffle_test: need at least 2 frames"));
    }

    // Gate on reconstruction quality.
    let mut gated = Vec::new();
    for (i, (r, g)) in recon_clips.iter().zip(gt_clips.iter()).enumerate() {
        if vifi_score(g, r, embedder)? > gate {
            gated.push(i);
        }
    }

    let mut p_values = vec![Vec::with_capacity(gated.len()); repeats];
    for &i in &gated {
        let gt = &gt_clips[i];
        let recon = &recon_clips[i];
        let tables = match metric {
            ShuffleMetric::Epe => epe_tables(gt, recon, flow)?,
            ShuffleMetric::ClipPcc => adjacency_tables(recon, embedder),
        };
        let n = gt.n_frames;
        let identity: Vec<usize> = (0..n).collect();
        let original = tables.score(&identity);
        for (rep, row) in p_values.iter_mut().enumerate() {
            let mut rng = rng_for(seed, &format!("shuffle.rep{rep}.sample{i}"));
            let mut delta_sum = 0usize;
            let mut order = identity.clone();
            for _ in 0..n_shuffles {
                order.shuffle(&mut rng);
                let score = tables.score(&order);
                let outperforms = match metric {
                    ShuffleMetric::Epe => score < original,
                    ShuffleMetric::ClipPcc => score > original,
                };
                if outperforms {
                    delta_sum += 1;
                }
            }
            row.push(delta_sum as f64 / n_shuffles as f64);
        }
    }

    Ok(ShuffleTestResult {
        metric,
        n_shuffles,
        repeats,
        gate,
        gated_sample_ids: gated,
        p_values,
    })
}

// ---------------------------------------------------------------------------
// Ablation harnesses
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub arm_a: String,
    pub arm_b: String,
    pub epe_a: Vec<f64>,
    pub epe_b: Vec<f64>,
}

impl AblationResult {
    pub fn mean_a(&self) -> f64 {
        crate::tensor::mean(&self.epe_a)
    }

    pub fn mean_b(&self) -> f64 {
        crate::tensor::mean(&self.epe_b)
    }
}

/// Reconstruct every test clip by rolling the CMG out from the structure
/// decoder's first-frame latent.
pub fn cmg_reconstructions(
    cmg: &CmgState,
    test: &Dataset,
    structure: &StructureDecoderState,
    tokenizer: &dyn FrameTokenizer,
    generator: &dyn FrameGeneratorBackend,
) -> Result<Vec<VideoClip>> {
    let (h, w) = test.manifest.frame_size;
    let n_frames = test.manifest.frames_per_clip;
    let mut out = Vec::with_capacity(test.n_samples());
    for i in 0..test.n_samples() {
        let voxels = test.fmri.row(i);
        let latent = structure.decode(voxels)?;
        let first_tokens = tokenizer.tokenize(&latent)?;
        let motion = cmg.generate_motion(&first_tokens, voxels, n_frames)?;
        let request = GenerationRequest::new(
            Mat::zeros(crate::encoders::CONDITION_ROWS, crate::encoders::CONDITION_COLS),
            motion,
            0,
        );
        out.push(reconstruct_video(&request, generator, tokenizer, h, w, i)?);
    }
    Ok(out)
}

/// Reconstructions of the per-frame-MLP arm: shared structure decoder for
/// frame 1, an independent MLP per later frame.
pub fn mlp_reconstructions(
    mlp: &PerFrameMlp,
    test: &Dataset,
    structure: &StructureDecoderState,
    tokenizer: &dyn FrameTokenizer,
    generator: &dyn FrameGeneratorBackend,
) -> Result<Vec<VideoClip>> {
    let (h, w) = test.manifest.frame_size;
    let n_frames = test.manifest.frames_per_clip;
    let mut out = Vec::with_capacity(test.n_samples());
    for i in 0..test.n_samples() {
        let voxels = test.fmri.row(i);
        let latent = structure.decode(voxels)?;
        let mut motion = vec![tokenizer.tokenize(&latent)?];
        for j in 1..n_frames {
            motion.push(mlp.predict_frame(voxels, j)?);
        }
        let request = GenerationRequest::new(
            Mat::zeros(crate::encoders::CONDITION_ROWS, crate::encoders::CONDITION_COLS),
            motion,
            0,
        );
        out.push(reconstruct_video(&request, generator, tokenizer, h, w, i)?);
    }
    Ok(out)
}

fn per_sample_epe(
    test: &Dataset,
    recon: &[VideoClip],
    flow: &dyn FlowBackend,
) -> Result<Vec<f64>> {
    (0..test.n_samples())
        .map(|i| crate::evaluation::metrics::epe(&test.clip(i), &recon[i], flow))
        .collect()
}

/// Train guided and unguided CMGs from the same initialization seed and
/// report per-sample EPE for each arm on the test split.
#[allow(clippy::too_many_arguments)]
pub fn guidance_ablation(
    train: &Dataset,
    test: &Dataset,
    structure: &StructureDecoderState,
    tokenizer: &dyn FrameTokenizer,
    generator: &dyn FrameGeneratorBackend,
    flow: &dyn FlowBackend,
    config: &CmgConfig,
    seed: u64,
) -> Result<AblationResult> {
    let guided_cfg = CmgConfig { fmri_guidance: true, ..config.clone() };
    let unguided_cfg = CmgConfig { fmri_guidance: false, ..config.clone() };
    let guided = train_cmg(train, tokenizer, &guided_cfg, seed)?;
    let unguided = train_cmg(train, tokenizer, &unguided_cfg, seed)?;

    let recon_a = cmg_reconstructions(&guided.state, test, structure, tokenizer, generator)?;
    let recon_b = cmg_reconstructions(&unguided.state, test, structure, tokenizer, generator)?;
    Ok(AblationResult {
        arm_a: "with_fmri".into(),
        arm_b: "without_fmri".into(),
        epe_a: per_sample_epe(test, &recon_a, flow)?,
        epe_b: per_sample_epe(test, &recon_b, flow)?,
    })
}

/// CMG against the per-frame-MLP baseline under the same budget.
#[allow(clippy::too_many_arguments)]
pub fn cmg_motion_ablation(
    train: &Dataset,
    test: &Dataset,
    structure: &StructureDecoderState,
    tokenizer: &dyn FrameTokenizer,
    generator: &dyn FrameGeneratorBackend,
    flow: &dyn FlowBackend,
    config: &CmgConfig,
    baseline_hidden: usize,
    seed: u64,
) -> Result<AblationResult> {
    let cmg = train_cmg(train, tokenizer, config, seed)?;
    let mlp = train_per_frame_mlp(train, tokenizer, baseline_hidden, config, subseed(seed, "baseline"))?;

    let recon_a = cmg_reconstructions(&cmg.state, test, structure, tokenizer, generator)?;
    let recon_b = mlp_reconstructions(&mlp, test, structure, tokenizer, generator)?;
    Ok(AblationResult {
        arm_a: "cmg".into(),
        arm_b: "per_frame_mlp".into(),
        epe_a: per_sample_epe(test, &recon_a, flow)?,
        epe_b: per_sample_epe(test, &recon_b, flow)?,
    })
}

// ---------------------------------------------------------------------------
// Importance maps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceMap {
    pub decoder_kind: String,
    /// Per-voxel weight in [0,1], max-normalized.
    pub weights: Vec<f64>,
}

/// Multiply the linear-layer weight matrices, average absolute values over
/// the output dimension, and min-max normalize.
pub fn voxel_importance_from_chain(mats: &[&Mat], kind: &str) -> Result<ImportanceMap> {
    if mats.is_empty() {
        return Err(CoreError::invalid("voxel_importance: empty weight chain"));
    }
    let mut product = mats[0].clone();
    for m in &mats[1..] {
        if product.cols != m.rows {
            return Err(CoreError::shape(
                "voxel_importance chain",
                product.cols.to_string(),
                m.rows.to_string(),
            ));
        }
        product = matmul(&product, false, m, false);
    }
    let n_voxels = product.rows;
    let mut weights = vec![0.0; n_voxels];
    for v in 0..n_voxels {
        let row = product.row(v);
        weights[v] = row.iter().map(|x| x.abs()).sum::<f64>() / row.len() as f64;
    }
    let min = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        for w in weights.iter_mut() {
            *w = (*w - min) / (max - min);
        }
    } else {
        weights.fill(1.0);
    }
    Ok(ImportanceMap { decoder_kind: kind.into(), weights })
}

pub fn semantic_importance(state: &SemanticDecoderState) -> Result<ImportanceMap> {
    voxel_importance_from_chain(&state.linear_weight_chain(), "semantic")
}

pub fn structure_importance(state: &StructureDecoderState) -> Result<ImportanceMap> {
    voxel_importance_from_chain(&state.linear_weight_chain(), "structure")
}

/// The CMG mixes tokens through attention, so its weight product is not a
/// voxel attribution; callers get a named error instead of a wrong map.
pub fn cmg_importance(_state: &CmgState) -> Result<ImportanceMap> {
    Err(CoreError::invalid(
        "voxel_importance: decoder 'cmg' contains non-linear layers \
         (temporal self-attention); only semantic and structure decoders linearize",
    ))
}

/// Per-ROI mean of voxel weights. Empty ROIs are excluded with a warning.
/// With `normalize` the means are divided by their maximum.
pub fn roi_importance(
    map: &ImportanceMap,
    labels: &[usize],
    names: &BTreeMap<usize, String>,
    normalize: bool,
) -> Result<(BTreeMap<String, f64>, Vec<String>)> {
    if labels.len() != map.weights.len() {
        return Err(CoreError::shape(
            "roi_importance labels",
            map.weights.len().to_string(),
            labels.len().to_string(),
        ));
    }
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (&label, &w) in labels.iter().zip(map.weights.iter()) {
        let e = sums.entry(label).or_insert((0.0, 0));
        e.0 += w;
        e.1 += 1;
    }
    let mut warnings = Vec::new();
    let mut means = BTreeMap::new();
    for (label, name) in names {
        match sums.get(label) {
            Some((sum, count)) if *count > 0 => {
                means.insert(name.clone(), sum / *count as f64);
            }
            _ => warnings.push(format!("ROI '{name}' (label {label}) has no voxels; excluded")),
        }
    }
    if normalize {
        let max = means.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > 0.0 {
            for v in means.values_mut() {
                *v /= max;
            }
        }
    }
    Ok((means, warnings))
}
