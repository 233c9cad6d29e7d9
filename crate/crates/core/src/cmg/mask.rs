//! Sparse causal attention mask over frame-token positions.
//!
//! The fixed part blocks every key in a later frame than its query, in both
//! modes. The random part additionally blocks strictly-past frame pairs with
//! probability `mask_ratio` during training; inference drops it entirely.
//! Same-frame attention is always kept, so every query row retains at least
//! one visible key; if a variant ever blocks a whole row it is redrawn.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Train,
    Inference,
}

#[derive(Debug, Clone)]
pub struct SparseCausalMask {
    pub n_frames: usize,
    pub tokens_per_frame: usize,
    pub mode: MaskMode,
    /// Frame-pair visibility, row-major n_frames x n_frames.
    pub frame_visible: Vec<bool>,
    /// Token-level visibility, row-major P_t x P_t with P_t = n * t_pf.
    pub visible: Arc<Vec<bool>>,
}

impl SparseCausalMask {
    pub fn positions(&self) -> usize {
        self.n_frames * self.tokens_per_frame
    }

    pub fn frame_pair(&self, q: usize, k: usize) -> bool {
        self.frame_visible[q * self.n_frames + k]
    }

    /// Fraction of strictly-past frame pairs that are blocked.
    pub fn blocked_past_fraction(&self) -> f64 {
        let mut eligible = 0usize;
        let mut blocked = 0usize;
        for q in 0..self.n_frames {
            for k in 0..q {
                eligible += 1;
                if !self.frame_pair(q, k) {
                    blocked += 1;
                }
            }
        }
        if eligible == 0 {
            0.0
        } else {
            blocked as f64 / eligible as f64
        }
    }
}

pub fn build_mask(
    n_frames: usize,
    tokens_per_frame: usize,
    mask_ratio: f64,
    mode: MaskMode,
    seed: u64,
) -> Result<SparseCausalMask> {
    if n_frames < 2 {
        return Err(CoreError::invalid("build_mask: need at least 2 frames"));
    }
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(CoreError::invalid(format!(
            "mask_ratio {mask_ratio} outside [0,1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame_visible = vec![false; n_frames * n_frames];
    for q in 0..n_frames {
        loop {
            // Fixed causal part plus random past blocking.
            for k in 0..n_frames {
                let vis = if k > q {
                    false
                } else if k == q {
                    true
                } else {
                    !(mode == MaskMode::Train && rng.gen::<f64>() < mask_ratio)
                };
                frame_visible[q * n_frames + k] = vis;
            }
            if (0..n_frames).any(|k| frame_visible[q * n_frames + k]) {
                break;
            }
            // All-blocked rows are redrawn; unreachable while the self pair
            // stays exempt from random masking.
        }
    }

    let p = n_frames * tokens_per_frame;
    let mut visible = vec![false; p * p];
    for q in 0..n_frames {
        for k in 0..n_frames {
            if !frame_visible[q * n_frames + k] {
                continue;
            }
            for i in 0..tokens_per_frame {
                for j in 0..tokens_per_frame {
                    visible[(q * tokens_per_frame + i) * p + k * tokens_per_frame + j] = true;
                }
            }
        }
    }
    Ok(SparseCausalMask {
        n_frames,
        tokens_per_frame,
        mode,
        frame_visible,
        visible: Arc::new(visible),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_zero_train_mask_is_pure_causal() {
        let m = build_mask(4, 3, 0.0, MaskMode::Train, 1).unwrap();
        for q in 0..4 {
            for k in 0..4 {
                assert_eq!(m.frame_pair(q, k), k <= q, "pair ({q},{k})");
            }
        }
        // Token expansion follows the frame pattern.
        let p = m.positions();
        for qi in 0..p {
            for ki in 0..p {
                let expect = ki / 3 <= qi / 3;
                assert_eq!(m.visible[qi * p + ki], expect);
            }
        }
    }

    #[test]
    fn inference_mask_equals_ratio_zero_causal_mask() {
        let inf = build_mask(8, 3, 0.6, MaskMode::Inference, 99).unwrap();
        let zero = build_mask(8, 3, 0.0, MaskMode::Train, 7).unwrap();
        assert_eq!(inf.frame_visible, zero.frame_visible);
        assert_eq!(*inf.visible, *zero.visible);
    }

    #[test]
    fn same_seed_reproduces_the_same_mask() {
        let a = build_mask(8, 3, 0.6, MaskMode::Train, 42).unwrap();
        let b = build_mask(8, 3, 0.6, MaskMode::Train, 42).unwrap();
        assert_eq!(a.frame_visible, b.frame_visible);
        let c = build_mask(8, 3, 0.6, MaskMode::Train, 43).unwrap();
        assert_ne!(a.frame_visible, c.frame_visible);
    }

    #[test]
    fn every_query_row_keeps_a_visible_key() {
        for seed in 0..50 {
            let m = build_mask(8, 3, 0.95, MaskMode::Train, seed).unwrap();
            let p = m.positions();
            for q in 0..p {
                assert!(
                    (0..p).any(|k| m.visible[q * p + k]),
                    "query {q} lost all keys at seed {seed}"
                );
            }
            // Self-frame attention is never blocked.
            for q in 0..8 {
                assert!(m.frame_pair(q, q));
            }
        }
    }

    #[test]
    fn blocked_fraction_matches_the_ratio_over_seeds() {
        let mut total = 0.0;
        let seeds = 1000;
        for seed in 0..seeds {
            let m = build_mask(8, 3, 0.6, MaskMode::Train, seed).unwrap();
            total += m.blocked_past_fraction();
        }
        let mean = total / seeds as f64;
        assert!(
            (mean - 0.6).abs() < 0.02,
            "mean blocked fraction {mean} should be 0.6 within 0.02"
        );
    }

    #[test]
    fn ratio_of_one_is_rejected() {
        assert!(build_mask(4, 3, 1.0, MaskMode::Train, 0).is_err());
        assert!(build_mask(1, 3, 0.5, MaskMode::Train, 0).is_err());
    }
}
