//! Analytic gradients against central finite differences at relative
//! tolerance 1e-4, on small instances of the contrastive loss and the full
//! motion-generator forward pass.

use mindkit_core::cmg::model::PackedBatch;
use mindkit_core::cmg::{build_mask, CmgConfig, CmgState, MaskMode};
use mindkit_core::graph::Graph;
use mindkit_core::semantic::{bi_infonce, build_bi_infonce};
use mindkit_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn bi_infonce_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, d) = (3, 5);
    let mut zhat = Mat::zeros(b, d);
    let mut z = Mat::zeros(b, d);
    for v in zhat.data.iter_mut().chain(z.data.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    let tau = 0.35;

    let mut g = Graph::new();
    let zh_var = g.leaf(zhat.clone());
    let z_var = g.leaf(z.clone());
    let tau_var = g.leaf(Mat::scalar(tau));
    let loss = build_bi_infonce(&mut g, zh_var, z_var, tau_var);
    let grads = g.backward(loss);
    let g_zh = grads.get(zh_var).unwrap().clone();
    let g_z = grads.get(z_var).unwrap().clone();
    let g_tau = grads.get(tau_var).unwrap().clone();

    let h = 1e-5;
    for e in 0..b * d {
        let mut plus = zhat.clone();
        plus.data[e] += h;
        let mut minus = zhat.clone();
        minus.data[e] -= h;
        let numeric = (bi_infonce(&plus, &z, tau).unwrap()
            - bi_infonce(&minus, &z, tau).unwrap())
            / (2.0 * h);
        assert!(
            rel_err(g_zh.data[e], numeric) < REL_TOL,
            "d/dzhat[{e}]: analytic {} vs numeric {numeric}",
            g_zh.data[e]
        );

        let mut plus = z.clone();
        plus.data[e] += h;
        let mut minus = z.clone();
        minus.data[e] -= h;
        let numeric = (bi_infonce(&zhat, &plus, tau).unwrap()
            - bi_infonce(&zhat, &minus, tau).unwrap())
            / (2.0 * h);
        assert!(
            rel_err(g_z.data[e], numeric) < REL_TOL,
            "d/dz[{e}]: analytic {} vs numeric {numeric}",
            g_z.data[e]
        );
    }
    let numeric_tau = (bi_infonce(&zhat, &z, tau + h).unwrap()
        - bi_infonce(&zhat, &z, tau - h).unwrap())
        / (2.0 * h);
    assert!(
        rel_err(g_tau.data[0], numeric_tau) < REL_TOL,
        "d/dtau: analytic {} vs numeric {numeric_tau}",
        g_tau.data[0]
    );
}

fn tiny_cmg() -> CmgState {
    CmgState::init(
        6,
        3,
        2,
        8,
        CmgConfig {
            layers: 2,
            d_model: 8,
            n_heads: 2,
            ffn_hidden: 12,
            n_memory: 2,
            ..Default::default()
        },
        17,
    )
    .unwrap()
}

/// Scalar loss of the tiny CMG: MSE between the forward output at unseen
/// positions and a fixed target, as in training.
fn cmg_loss_value(state: &CmgState, batch: &PackedBatch, mask: &mindkit_core::cmg::SparseCausalMask, target: &Mat) -> f64 {
    let mut g = Graph::new();
    let vars = state.params.leaf_all(&mut g);
    let out = state.build_forward(&mut g, &vars, batch, mask);
    let t = g.leaf(target.clone());
    let pred = g.slice_rows(out, 2, 6); // frames 1..3 of a 3-frame, 2-token setup
    let tgt = g.slice_rows(t, 2, 6);
    let loss = g.mse(pred, tgt);
    g.scalar_value(loss)
}

#[test]
fn cmg_forward_and_loss_gradients_match_finite_differences() {
    let mut state = tiny_cmg();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut tokens = Mat::zeros(6, 8);
    for v in tokens.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut target = Mat::zeros(6, 8);
    for v in target.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let fmri: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mask = build_mask(3, 2, 0.5, MaskMode::Train, 5).unwrap();
    let batch = PackedBatch {
        tokens: tokens.clone(),
        real_rows: vec![true, true, false, false, false, false],
        fmri: Mat::from_vec(1, 6, fmri),
        n_in: 3,
        b: 1,
    };

    // Analytic gradients for every parameter.
    let mut g = Graph::new();
    let vars = state.params.leaf_all(&mut g);
    let out = state.build_forward(&mut g, &vars, &batch, &mask);
    let t = g.leaf(target.clone());
    let pred = g.slice_rows(out, 2, 6);
    let tgt = g.slice_rows(t, 2, 6);
    let loss = g.mse(pred, tgt);
    let grads = g.backward(loss);

    let h = 1e-5;
    let mut checked = 0usize;
    for p in 0..state.params.len() {
        let flat_len = state.params.get(p).len();
        let zero;
        let analytic = match grads.get(vars[p]) {
            Some(m) => m.clone(),
            None => {
                zero = Mat::zeros(state.params.get(p).rows, state.params.get(p).cols);
                zero
            }
        };
        // Probe a handful of elements per tensor.
        let stride = (flat_len / 5).max(1);
        for e in (0..flat_len).step_by(stride) {
            let orig = state.params.get(p).data[e];
            state.params.get_mut(p).data[e] = orig + h;
            let plus = cmg_loss_value(&state, &batch, &mask, &target);
            state.params.get_mut(p).data[e] = orig - h;
            let minus = cmg_loss_value(&state, &batch, &mask, &target);
            state.params.get_mut(p).data[e] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data[e];
            // Parameters untouched by this variant legitimately have zero
            // gradient on both routes.
            if a.abs() < 1e-12 && numeric.abs() < 1e-7 {
                continue;
            }
            assert!(
                rel_err(a, numeric) < REL_TOL,
                "param {} [{e}]: analytic {a} vs numeric {numeric}",
                state.params.names()[p]
            );
            checked += 1;
        }
    }
    assert!(checked > 40, "too few gradient probes exercised ({checked})");
}
