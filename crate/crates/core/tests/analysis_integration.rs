//! Interpretability pipeline on planted ground truth: signal-voxel ranking,
//! the noise-ceiling shuffle comparison, and reliability-based selection.

use std::collections::BTreeMap;

use mindkit_core::analysis::{
    semantic_importance, shuffle_test, structure_importance, ShuffleMetric,
};
use mindkit_core::dataio::preprocess::select_voxels;
use mindkit_core::dataio::synthetic::{generate_in_memory, SyntheticConfig};
use mindkit_core::dataio::{save_split, DatasetManifest, Dataset, Split};
use mindkit_core::encoders::{ToyConditioner, ToyEmbedder, ToyTokenizer};
use mindkit_core::evaluation::BlockMatchingFlow;
use mindkit_core::semantic::augment::AugmentationPolicy;
use mindkit_core::semantic::{train_semantic, SemanticConfig};
use mindkit_core::structure::{train_structure, StructureConfig};
use mindkit_core::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rank-based AUC of signal voxels against noise voxels.
fn ranking_auc(weights: &[f64], signal: &[usize]) -> f64 {
    let is_signal: Vec<bool> = (0..weights.len()).map(|i| signal.contains(&i)).collect();
    let mut pairs = 0usize;
    let mut wins = 0.0f64;
    for (i, &si) in is_signal.iter().enumerate() {
        if !si {
            continue;
        }
        for (j, &sj) in is_signal.iter().enumerate() {
            if sj {
                continue;
            }
            pairs += 1;
            if weights[i] > weights[j] {
                wins += 1.0;
            } else if weights[i] == weights[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}

/// Build a dataset where only ten voxels carry the scene code; the rest are
/// pure noise.
fn planted_dataset(dir: &std::path::Path, signal: &[usize]) -> Dataset {
    let cfg = SyntheticConfig {
        n_train: 200,
        n_test: 20,
        n_voxels: 10, // dense scene code, re-embedded below
        seed: 99,
        ..Default::default()
    };
    let (_, split, _) = generate_in_memory(&cfg);
    let n = split.clips.len();
    let n_voxels = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut fmri = Mat::zeros(n, n_voxels);
    for i in 0..n {
        for v in 0..n_voxels {
            *fmri.at_mut(i, v) = rng.gen_range(-1.0..1.0);
        }
        // The ten planted voxels carry the informative response.
        for (slot, &v) in signal.iter().enumerate() {
            *fmri.at_mut(i, v) = split.fmri.at(i, slot);
        }
    }
    let manifest = DatasetManifest {
        name: "planted".into(),
        split: Split::Train,
        n_samples: n,
        n_voxels,
        frames_per_clip: 8,
        frame_hz: 4.0,
        frame_size: (64, 64),
        lag_seconds: 4.0,
        tr_seconds: 2.0,
        captions: String::new(),
        paths: Default::default(),
    };
    let _ = std::fs::remove_dir_all(dir);
    save_split(dir, manifest, &fmri, &split.clips, &[]).unwrap();
    Dataset::load(dir).unwrap()
}

#[test]
fn planted_signal_voxels_rank_above_noise_with_high_auc() {
    let signal: Vec<usize> = vec![3, 11, 24, 37, 42, 55, 68, 71, 86, 93];
    let dir = std::env::temp_dir().join("mindkit_planted_importance");
    let ds = planted_dataset(&dir, &signal);

    // Structure decoder attribution.
    let out = train_structure(
        &ds,
        &ToyTokenizer::new(),
        &StructureConfig {
            epochs: 60,
            batch_size: 32,
            lr: 2e-3,
            warmup_steps: 20,
            hidden: 128,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    let map = structure_importance(&out.state).unwrap();
    let auc = ranking_auc(&map.weights, &signal);
    assert!(auc >= 0.9, "structure importance AUC {auc:.3} below 0.9");

    // Semantic decoder attribution on the same planted data.
    let sem = train_semantic(
        &ds,
        &ToyEmbedder::new(),
        &ToyConditioner,
        &SemanticConfig {
            epochs: 15,
            batch_size: 32,
            lr: 1.2e-3,
            trunk_hidden: 128,
            head_hidden: 16,
            ..Default::default()
        },
        &AugmentationPolicy::default(),
        3,
    )
    .unwrap();
    let map = semantic_importance(&sem.state).unwrap();
    let auc = ranking_auc(&map.weights, &signal);
    assert!(auc >= 0.9, "semantic importance AUC {auc:.3} below 0.9");

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn importance_map_survives_last_layer_rescaling_exactly() {
    let signal: Vec<usize> = (0..10).collect();
    let dir = std::env::temp_dir().join("mindkit_rescale_importance");
    let ds = planted_dataset(&dir, &signal);
    let out = train_structure(
        &ds,
        &ToyTokenizer::new(),
        &StructureConfig { epochs: 4, batch_size: 32, lr: 1e-3, hidden: 64, ..Default::default() },
        1,
    )
    .unwrap();
    let base = structure_importance(&out.state).unwrap();
    // Power-of-two scaling is exact in IEEE arithmetic, so the normalized
    // map must be bit-identical.
    let mut rescaled = out.state;
    for v in rescaled.last_layer_weight_mut().data.iter_mut() {
        *v *= 4.0;
    }
    let scaled = structure_importance(&rescaled).unwrap();
    for (a, b) in base.weights.iter().zip(scaled.weights.iter()) {
        assert_eq!(a.to_bits(), b.to_bits(), "normalized map must absorb the scale exactly");
    }
    // A general positive scale is exact up to rounding.
    for v in rescaled.last_layer_weight_mut().data.iter_mut() {
        *v *= 1.3;
    }
    let scaled = structure_importance(&rescaled).unwrap();
    for (a, b) in base.weights.iter().zip(scaled.weights.iter()) {
        assert!((a - b).abs() < 1e-12);
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn noise_ceiling_epe_p_beats_clip_pcc_p() {
    // Block-aligned clips reproduce exactly through the toy stack, so the
    // noise-ceiling reconstruction is the stimulus itself.
    let cfg = SyntheticConfig {
        n_train: 24,
        n_test: 4,
        n_voxels: 16,
        frame_size: 128,
        block_aligned: true,
        seed: 71,
        ..Default::default()
    };
    let (_, split, _) = generate_in_memory(&cfg);
    let embedder = ToyEmbedder::new();
    let flow = BlockMatchingFlow::default();

    let epe_result = shuffle_test(
        &split.clips,
        &split.clips.clone(),
        ShuffleMetric::Epe,
        50,
        0.6,
        2,
        &embedder,
        &flow,
        13,
    )
    .unwrap();
    let clip_result = shuffle_test(
        &split.clips,
        &split.clips.clone(),
        ShuffleMetric::ClipPcc,
        50,
        0.6,
        2,
        &embedder,
        &flow,
        13,
    )
    .unwrap();
    let epe_p = epe_result.mean_p();
    let clip_p = clip_result.mean_p();
    assert!(epe_p < 0.05, "noise-ceiling EPE P {epe_p:.3} should be near zero");
    assert!(
        epe_p < clip_p,
        "EPE should be the sharper order statistic: EPE P {epe_p:.3} vs clip P {clip_p:.3}"
    );
}

#[test]
fn planted_reliable_voxels_are_selected_exactly() {
    // Ten voxels share a signal across repetitions; ninety are independent
    // noise. Top-10 reliability selection must recover the planted set.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let t = 60;
    let n_voxels = 100;
    let planted: Vec<usize> = vec![2, 9, 17, 33, 41, 52, 60, 77, 88, 95];
    let mut rep_a = Mat::zeros(t, n_voxels);
    let mut rep_b = Mat::zeros(t, n_voxels);
    for ti in 0..t {
        for v in 0..n_voxels {
            *rep_a.at_mut(ti, v) = rng.gen_range(-1.0..1.0);
            *rep_b.at_mut(ti, v) = rng.gen_range(-1.0..1.0);
        }
    }
    for &v in &planted {
        for ti in 0..t {
            let shared: f64 = (ti as f64 * 0.7).sin() + 0.2 * rng.gen_range(-1.0..1.0);
            *rep_a.at_mut(ti, v) = shared + 0.1 * rng.gen_range(-1.0..1.0);
            *rep_b.at_mut(ti, v) = shared + 0.1 * rng.gen_range(-1.0..1.0);
        }
    }
    let sel = select_voxels(&rep_a, &rep_b, 10).unwrap();
    assert_eq!(sel.kept_indices, planted, "selection must recover the planted voxels");

    // Oracle: exhaustive correlation ranking agrees on the top set.
    let mut scored: Vec<(usize, f64)> = (0..n_voxels)
        .map(|v| {
            let a: Vec<f64> = (0..t).map(|ti| rep_a.at(ti, v)).collect();
            let b: Vec<f64> = (0..t).map(|ti| rep_b.at(ti, v)).collect();
            (v, mindkit_core::tensor::pearson(&a, &b).unwrap_or(f64::NEG_INFINITY))
        })
        .collect();
    scored.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
    let mut oracle_top: Vec<usize> = scored[..10].iter().map(|(v, _)| *v).collect();
    oracle_top.sort_unstable();
    assert_eq!(sel.kept_indices, oracle_top);
}

#[test]
fn roi_labels_ride_along_as_dataset_arrays() {
    // ROI label vectors travel the same container as everything else.
    let dir = std::env::temp_dir().join("mindkit_roi_rountrip");
    let signal: Vec<usize> = (0..10).collect();
    let ds = planted_dataset(&dir, &signal);
    let labels: Vec<f64> = (0..ds.manifest.n_voxels).map(|v| (v % 3) as f64).collect();
    let meta = mindkit_core::container::write_f32(
        &dir,
        "roi_labels",
        &[ds.manifest.n_voxels],
        &labels,
    )
    .unwrap();
    let back = mindkit_core::container::read_f32(&dir, &meta).unwrap();
    let as_labels: Vec<usize> = back.iter().map(|&v| v as usize).collect();
    let map = mindkit_core::analysis::ImportanceMap {
        decoder_kind: "probe".into(),
        weights: (0..ds.manifest.n_voxels).map(|v| v as f64 / 100.0).collect(),
    };
    let mut names = BTreeMap::new();
    names.insert(0usize, "v1".to_string());
    names.insert(1usize, "v2".to_string());
    names.insert(2usize, "mt".to_string());
    let (means, warnings) =
        mindkit_core::analysis::roi_importance(&map, &as_labels, &names, true).unwrap();
    assert_eq!(means.len(), 3);
    assert!(warnings.is_empty());
    let max = means.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((max - 1.0).abs() < 1e-12, "normalized ROI means peak at 1");
    let _ = std::fs::remove_dir_all(&dir);
}
