//! N-trial n-way top-1 classification harness with pluggable classifiers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dataio::synthetic::{PALETTE, SHAPES};
use crate::dataio::VideoClip;
use crate::encoders::describe_frame;
use crate::error::{CoreError, Result};
use crate::nn::rng_for;
use crate::tensor::cosine;

/// Frame- and clip-level classifier over a fixed label set.
pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;
    fn n_classes(&self) -> usize;
    /// Probabilities over classes for one frame; must sum to 1.
    fn classify_frame(&self, frame: &[f64], h: usize, w: usize) -> Vec<f64>;

    /// Clip-level probabilities: mean of per-frame distributions.
    fn classify_clip(&self, clip: &VideoClip) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_classes()];
        for j in 0..clip.n_frames {
            let p = self.classify_frame(clip.frame(j), clip.height, clip.width);
            for (a, b) in acc.iter_mut().zip(p.iter()) {
                *a += b;
            }
        }
        for a in acc.iter_mut() {
            *a /= clip.n_frames as f64;
        }
        acc
    }
}

/// Classifies synthetic scenes into (color, shape) classes from pixel
/// statistics: graded in color, sharp in shape.
pub struct ToyClassifier;

impl ToyClassifier {
    pub fn class_index(color_idx: usize, shape_idx: usize) -> usize {
        color_idx * SHAPES.len() + shape_idx
    }
}

impl ClassifierBackend for ToyClassifier {
    fn name(&self) -> &str {
        "toy"
    }

    fn n_classes(&self) -> usize {
        PALETTE.len() * SHAPES.len()
    }

    fn classify_frame(&self, frame: &[f64], h: usize, w: usize) -> Vec<f64> {
        let n = self.n_classes();
        let desc = match describe_frame(frame, h, w) {
            Some(d) => d,
            None => return vec![1.0 / n as f64; n],
        };
        // Mean color direction over lit pixels for graded color scores.
        let mut mean_rgb = [0.0f64; 3];
        let mut mass = 0.0;
        for y in 0..h {
            for x in 0..w {
                let lum: f64 = (0..3).map(|c| frame[(c * h + y) * w + x]).sum();
                if lum > 0.05 {
                    for (c, m) in mean_rgb.iter_mut().enumerate() {
                        *m += frame[(c * h + y) * w + x];
                    }
                    mass += 1.0;
                }
            }
        }
        if mass > 0.0 {
            for m in mean_rgb.iter_mut() {
                *m /= mass;
            }
        }
        let mut logits = vec![0.0; n];
        for (ci, (_, rgb)) in PALETTE.iter().enumerate() {
            let color_score = cosine(&mean_rgb, rgb);
            for (si, shape) in SHAPES.iter().enumerate() {
                let shape_score = if *shape == desc.shape { 1.0 } else { 0.0 };
                logits[Self::class_index(ci, si)] = 4.0 * color_score + 2.0 * shape_score;
            }
        }
        softmax(&logits)
    }
}

/// Uniform probabilities: the chance-level reference classifier.
pub struct UniformClassifier {
    pub classes: usize,
}

impl ClassifierBackend for UniformClassifier {
    fn name(&self) -> &str {
        "uniform"
    }

    fn n_classes(&self) -> usize {
        self.classes
    }

    fn classify_frame(&self, _frame: &[f64], _h: usize, _w: usize) -> Vec<f64> {
        vec![1.0 / self.classes as f64; self.classes]
    }
}

pub fn classifier(name: &str) -> Result<std::sync::Arc<dyn ClassifierBackend>> {
    match name {
        "toy" => Ok(std::sync::Arc::new(ToyClassifier)),
        "uniform" => Ok(std::sync::Arc::new(UniformClassifier {
            classes: ToyClassifier.n_classes(),
        })),
        _ => Err(CoreError::UnknownBackend {
            kind: "classifier".into(),
            name: name.into(),
            known: "toy, uniform".into(),
        }),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NwayMode {
    Image,
    Video,
}

/// Argmax over the candidate classes with seeded random tie-breaking, so a
/// uniform classifier sits exactly at chance.
fn argmax_candidate(probs: &[f64], candidates: &[usize], rng: &mut ChaCha8Rng) -> usize {
    let mut best = Vec::new();
    let mut best_p = f64::NEG_INFINITY;
    for &c in candidates {
        if probs[c] > best_p {
            best_p = probs[c];
            best.clear();
            best.push(c);
        } else if probs[c] == best_p {
            best.push(c);
        }
    }
    best[rng.gen_range(0..best.len())]
}

fn run_trials(
    gt_probs: &[f64],
    pred_probs: &[f64],
    n: usize,
    trials: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n_classes = gt_probs.len();
    let truth = (0..n_classes)
        .max_by(|&a, &b| gt_probs[a].partial_cmp(&gt_probs[b]).unwrap())
        .unwrap();
    let others: Vec<usize> = (0..n_classes).filter(|&c| c != truth).collect();
    let mut successes = 0usize;
    for _ in 0..trials {
        let mut pool = others.clone();
        pool.shuffle(rng);
        let mut candidates: Vec<usize> = pool[..n - 1].to_vec();
        candidates.push(truth);
        if argmax_candidate(pred_probs, &candidates, rng) == truth {
            successes += 1;
        }
    }
    successes as f64 / trials as f64
}

/// N-trial n-way top-1 classification: ground-truth class from the real
/// clip, distractors drawn without replacement, success when the predicted
/// clip's probabilities put the true class first. Image mode averages the
/// per-frame rates.
#[allow(clippy::too_many_arguments)]
pub fn nway_top1(
    gt: &VideoClip,
    pred: &VideoClip,
    n: usize,
    trials: usize,
    mode: NwayMode,
    classifier: &dyn ClassifierBackend,
    seed: u64,
) -> Result<f64> {
    if n < 2 || n > classifier.n_classes() {
        return Err(CoreError::invalid(format!(
            "n-way n={n} outside 2..={}",
            classifier.n_classes()
        )));
    }
    if trials == 0 {
        return Err(CoreError::invalid("nway_top1: trials must be >= 1"));
    }
    let mut rng = rng_for(seed, "nway");
    match mode {
        NwayMode::Video => {
            let gt_p = classifier.classify_clip(gt);
            let pred_p = classifier.classify_clip(pred);
            Ok(run_trials(&gt_p, &pred_p, n, trials, &mut rng))
        }
        NwayMode::Image => {
            let mut acc = 0.0;
            for j in 0..gt.n_frames {
                let gt_p = classifier.classify_frame(gt.frame(j), gt.height, gt.width);
                let pred_p = classifier.classify_frame(pred.frame(j), pred.height, pred.width);
                acc += run_trials(&gt_p, &pred_p, n, trials, &mut rng);
            }
            Ok(acc / gt.n_frames as f64)
        }
    }
}
