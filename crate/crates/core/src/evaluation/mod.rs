//! Metric suite: the eight reconstruction metrics, the n-way classification
//! harness, retrieval, and bootstrap aggregation into a single report.

pub mod bootstrap;
pub mod flow;
pub mod metrics;
pub mod nway;
pub mod retrieval;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::VideoClip;
use crate::encoders::EmbeddingBackend;
use crate::error::{CoreError, Result};
use crate::nn::subseed;

pub use bootstrap::{bootstrap_aggregate, BootstrapSummary, DEFAULT_N_BOOT};
pub use flow::{flow_backend, BlockMatchingFlow, FlowBackend};
pub use metrics::{
    adjacent_similarity, clip_pcc, epe, hue_pcc, psnr, psnr_clip, ssim, ssim_clip, vifi_score,
    CLIP_PCC_GATE, PSNR_CAP_DB,
};
pub use nway::{classifier, ClassifierBackend, NwayMode, ToyClassifier, UniformClassifier};
pub use retrieval::{retrieval, RetrievalReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub sample_id: usize,
    pub two_way_i: f64,
    pub two_way_v: f64,
    pub vifi: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub hue_pcc: f64,
    pub clip_pcc: f64,
    pub epe: f64,
}

impl SampleMetrics {
    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "two_way_i" => self.two_way_i,
            "two_way_v" => self.two_way_v,
            "vifi" => self.vifi,
            "ssim" => self.ssim,
            "psnr" => self.psnr,
            "hue_pcc" => self.hue_pcc,
            "clip_pcc" => self.clip_pcc,
            "epe" => self.epe,
            _ => f64::NAN,
        }
    }
}

pub const METRIC_NAMES: [&str; 8] = [
    "two_way_i",
    "two_way_v",
    "vifi",
    "ssim",
    "psnr",
    "hue_pcc",
    "clip_pcc",
    "epe",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_sample: Vec<SampleMetrics>,
    pub aggregates: BTreeMap<String, BootstrapSummary>,
    pub gating_threshold: f64,
    pub n_boot: usize,
    pub seed: u64,
    pub nway_trials: usize,
}

impl MetricReport {
    /// Recompute the aggregates from the per-sample records; used to verify
    /// that the stored aggregates are consistent.
    pub fn recompute_aggregates(&self) -> Result<BTreeMap<String, BootstrapSummary>> {
        let mut out = BTreeMap::new();
        for name in METRIC_NAMES {
            let values: Vec<f64> = self.per_sample.iter().map(|s| s.metric(name)).collect();
            out.insert(
                name.to_string(),
                bootstrap_aggregate(&values, self.n_boot, subseed(self.seed, name))?,
            );
        }
        Ok(out)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,ci_lo,ci_hi\n");
        for (name, agg) in &self.aggregates {
            out.push_str(&format!("{name},{},{},{}\n", agg.mean, agg.ci_lo, agg.ci_hi));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub nway_n: usize,
    pub nway_trials: usize,
    pub n_boot: usize,
    pub gate: f64,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            nway_n: 2,
            nway_trials: 100,
            n_boot: DEFAULT_N_BOOT,
            gate: CLIP_PCC_GATE,
            seed: 0,
        }
    }
}

/// Evaluate every (ground truth, reconstruction) pair and aggregate.
pub fn evaluate_clips(
    gt: &[VideoClip],
    recon: &[VideoClip],
    embedder: &dyn EmbeddingBackend,
    classifier: &dyn ClassifierBackend,
    flow: &dyn FlowBackend,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if gt.len() != recon.len() || gt.is_empty() {
        return Err(CoreError::invalid(format!(
            "evaluate_clips: {} ground-truth vs {} reconstructed clips",
            gt.len(),
            recon.len()
        )));
    }
    let per_sample: Result<Vec<SampleMetrics>> = gt
        .par_iter()
        .zip(recon.par_iter())
        .enumerate()
        .map(|(i, (g, r))| {
            let sample_seed = subseed(opts.seed, &format!("eval.sample{i}"));
            let vifi = vifi_score(g, r, embedder)?;
            Ok(SampleMetrics {
                sample_id: g.sample_id,
                two_way_i: nway::nway_top1(
                    g,
                    r,
                    opts.nway_n,
                    opts.nway_trials,
                    NwayMode::Image,
                    classifier,
                    subseed(sample_seed, "image"),
                )?,
                two_way_v: nway::nway_top1(
                    g,
                    r,
                    opts.nway_n,
                    opts.nway_trials,
                    NwayMode::Video,
                    classifier,
                    subseed(sample_seed, "video"),
                )?,
                vifi,
                ssim: ssim_clip(g, r)?,
                psnr: psnr_clip(g, r)?,
                hue_pcc: hue_pcc(g, r)?,
                clip_pcc: clip_pcc(r, vifi, embedder, opts.gate)?,
                epe: epe(g, r, flow)?,
            })
        })
        .collect();
    let per_sample = per_sample?;

    let mut report = MetricReport {
        per_sample,
        aggregates: BTreeMap::new(),
        gating_threshold: opts.gate,
        n_boot: opts.n_boot,
        seed: opts.seed,
        nway_trials: opts.nway_trials,
    };
    report.aggregates = report.recompute_aggregates()?;
    Ok(report)
}
