//! Independent brute-force oracles for every training loss. The oracles are
//! deliberately written as plain double loops with no shared code with the
//! implementations they check.

use mindkit_core::cmg::{consistency_loss, FrameTokens};
use mindkit_core::semantic::{bi_infonce, combined_loss, semantic_loss};
use mindkit_core::structure::structure_loss;
use mindkit_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for r in 0..rows {
        let row = m.row_mut(r);
        let mut norm = 0.0;
        for v in row.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
            norm += *v * *v;
        }
        let norm = norm.sqrt();
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    m
}

/// Hand-rolled softmax oracle for the bidirectional InfoNCE loss.
fn bi_infonce_oracle(zhat: &Mat, z: &Mat, tau: f64) -> f64 {
    let b = zhat.rows;
    let cos = |a: &[f64], c: &[f64]| {
        let dot: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nc: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nc)
    };
    let mut total = 0.0;
    for i in 0..b {
        // Row direction: softmax over z_j for fixed zhat_i.
        let mut denom_row = 0.0;
        for j in 0..b {
            denom_row += (cos(zhat.row(i), z.row(j)) / tau).exp();
        }
        let pos = (cos(zhat.row(i), z.row(i)) / tau).exp();
        total += (pos / denom_row).ln();
        // Column direction: softmax over zhat_k for fixed z_i.
        let mut denom_col = 0.0;
        for k in 0..b {
            denom_col += (cos(zhat.row(k), z.row(i)) / tau).exp();
        }
        total += (pos / denom_col).ln();
    }
    -total / b as f64
}

#[test]
fn bi_infonce_matches_the_double_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for b in 1..=4 {
        for trial in 0..5 {
            let zhat = unit_rows(&mut rng, b, 6);
            let z = unit_rows(&mut rng, b, 6);
            let tau = 0.2 + 0.3 * trial as f64;
            let got = bi_infonce(&zhat, &z, tau).unwrap();
            let want = bi_infonce_oracle(&zhat, &z, tau);
            assert!(
                (got - want).abs() < 1e-6,
                "B={b} trial={trial}: {got} vs oracle {want}"
            );
        }
    }
}

#[test]
fn orthonormal_two_batch_closed_form() {
    let z = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let got = bi_infonce(&z, &z.clone(), 1.0).unwrap();
    let closed_form = 2.0 * (1.0 + (-1.0f64).exp()).ln();
    assert!((got - closed_form).abs() < 1e-6);
    assert!((closed_form - 0.6265).abs() < 1e-3, "sanity on the quoted value");
}

#[test]
fn semantic_loss_is_the_stated_mixture() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = unit_rows(&mut rng, 3, 5);
    let t = unit_rows(&mut rng, 3, 5);
    let v = unit_rows(&mut rng, 3, 5);
    let tau = 0.4;
    for &alpha in &[0.0, 0.25, 0.5, 1.0] {
        let got = semantic_loss(&f, &t, &v, alpha, tau).unwrap();
        let want =
            alpha * bi_infonce_oracle(&f, &t, tau) + (1.0 - alpha) * bi_infonce_oracle(&f, &v, tau);
        assert!((got - want).abs() < 1e-6, "alpha={alpha}");
    }
}

#[test]
fn combined_loss_equals_the_sum_of_independent_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = 4;
    let f = unit_rows(&mut rng, b, 6);
    let t = unit_rows(&mut rng, b, 6);
    let v = unit_rows(&mut rng, b, 6);
    let mut c_pred = Mat::zeros(b, 10);
    let mut c_true = Mat::zeros(b, 10);
    for x in c_pred.data.iter_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    for x in c_true.data.iter_mut() {
        *x = rng.gen_range(-1.0..1.0);
    }
    let (l1, l2, alpha, tau) = (0.01, 0.5, 0.5, 0.07);

    // Term-by-term oracle.
    let mut proj1 = 0.0;
    for i in 0..b {
        for d in 0..6 {
            let diff = f.at(i, d) - t.at(i, d);
            proj1 += diff * diff;
        }
    }
    proj1 /= b as f64;
    let sem = alpha * bi_infonce_oracle(&f, &t, tau) + (1.0 - alpha) * bi_infonce_oracle(&f, &v, tau);
    let mut proj2 = 0.0;
    for i in 0..b {
        for d in 0..10 {
            let diff = c_pred.at(i, d) - c_true.at(i, d);
            proj2 += diff * diff;
        }
    }
    proj2 /= b as f64;
    let want = proj1 + l1 * sem + l2 * proj2;

    let got = combined_loss(&f, &t, &c_pred, &c_true, l1, l2, alpha, &v, tau).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");

    // Defaults from the training configuration.
    let defaults = mindkit_core::semantic::SemanticConfig::default();
    assert_eq!(defaults.lambda1, 0.01);
    assert_eq!(defaults.lambda2, 0.5);
    assert_eq!(defaults.alpha, 0.5);
}

#[test]
fn structure_loss_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pred = Mat::zeros(3, 8);
    let mut target = Mat::zeros(3, 8);
    for x in pred.data.iter_mut() {
        *x = rng.gen_range(-2.0..2.0);
    }
    for x in target.data.iter_mut() {
        *x = rng.gen_range(-2.0..2.0);
    }
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..8 {
            let d = pred.at(i, j) - target.at(i, j);
            acc += d * d;
        }
    }
    let want = acc / 24.0;
    let got = structure_loss(&pred, &target).unwrap();
    assert!((got - want).abs() < 1e-7);
}

#[test]
fn consistency_loss_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut make = |frames: usize| -> FrameTokens {
        (0..frames)
            .map(|_| {
                (0..3)
                    .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect()
    };
    let pred = make(4);
    let truth = make(4);
    let mut acc = 0.0;
    let mut n = 0;
    for j in 0..4 {
        for t in 0..3 {
            for c in 0..5 {
                let d = pred[j][t][c] - truth[j][t][c];
                acc += d * d;
                n += 1;
            }
        }
    }
    let want = acc / n as f64;
    let got = consistency_loss(&pred, &truth).unwrap();
    assert!((got - want).abs() < 1e-6);
}
