//! Bootstrap aggregation of per-sample metric values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::rng_for;

pub const DEFAULT_N_BOOT: usize = 100;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_boot: usize,
}

/// Resample-with-replacement means with a 2.5/97.5 percentile interval.
pub fn bootstrap_aggregate(values: &[f64], n_boot: usize, seed: u64) -> Result<BootstrapSummary> {
    if values.is_empty() {
        return Err(CoreError::invalid("bootstrap_aggregate: no samples"));
    }
    if n_boot == 0 {
        return Err(CoreError::invalid("bootstrap_aggregate: n_boot must be >= 1"));
    }
    let mut rng = rng_for(seed, "bootstrap");
    let n = values.len();
    let mut means = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += values[rng.gen_range(0..n)];
        }
        means.push(acc / n as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BootstrapSummary {
        mean: values.iter().sum::<f64>() / n as f64,
        ci_lo: percentile(&means, 0.025),
        ci_hi: percentile(&means, 0.975),
        n_boot,
    })
}

/// Linear-interpolated percentile of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values_have_zero_width_interval() {
        let s = bootstrap_aggregate(&[2.5; 40], DEFAULT_N_BOOT, 3).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.ci_lo, 2.5);
        assert_eq!(s.ci_hi, 2.5);
    }

    #[test]
    fn interval_contains_the_sample_mean_over_random_draws() {
        use rand::Rng;
        let mut rng = rng_for(9, "bootstrap.test");
        for trial in 0..20 {
            let values: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let s = bootstrap_aggregate(&values, DEFAULT_N_BOOT, trial).unwrap();
            assert!(
                s.ci_lo <= s.mean && s.mean <= s.ci_hi,
                "trial {trial}: CI [{}, {}] misses mean {}",
                s.ci_lo,
                s.ci_hi,
                s.mean
            );
            assert!(s.ci_lo < s.ci_hi);
        }
    }

    #[test]
    fn same_seed_reproduces_the_interval() {
        let values: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let a = bootstrap_aggregate(&values, DEFAULT_N_BOOT, 42).unwrap();
        let b = bootstrap_aggregate(&values, DEFAULT_N_BOOT, 42).unwrap();
        assert_eq!(a.ci_lo.to_bits(), b.ci_lo.to_bits());
        assert_eq!(a.ci_hi.to_bits(), b.ci_hi.to_bits());
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(bootstrap_aggregate(&[], 100, 0).is_err());
        assert!(bootstrap_aggregate(&[1.0], 0, 0).is_err());
    }
}
