//! Pre-build pilot: runs the full synthetic pipeline and the two ablation
//! arms at the shipped desk configuration and prints every measured value
//! next to its acceptance threshold. The acceptance suite pins exactly the
//! numbers this script confirms.
//!
//!     cargo run --release -p mindkit-cli --example pilot

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use mindkit_core::analysis::{
    cmg_reconstructions, mlp_reconstructions, shuffle_test, structure_importance, ShuffleMetric,
};
use mindkit_core::cmg::train::{train_cmg, train_per_frame_mlp};
use mindkit_core::cmg::CmgConfig;
use mindkit_core::dataio::Dataset;
use mindkit_core::encoders::{self, EmbeddingBackend};
use mindkit_core::evaluation::{retrieval, BlockMatchingFlow};
use mindkit_core::generator::frame_generator;
use mindkit_core::semantic::augment::AugmentationPolicy;
use mindkit_core::semantic::train_semantic;
use mindkit_core::structure::train_structure;
use mindkit_core::tensor::mean;
use mindkit_core::Mat;

fn check(name: &str, value: f64, threshold: f64, higher_is_better: bool) {
    let pass = if higher_is_better { value >= threshold } else { value <= threshold };
    println!(
        "  {:<46} {:>10.4}  (threshold {} {:.4})  [{}]",
        name,
        value,
        if higher_is_better { ">=" } else { "<=" },
        threshold,
        if pass { "ok" } else { "MISS" }
    );
}

fn main() {
    let started = Instant::now();
    let out = std::env::var("MINDKIT_PILOT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|_| std::env::temp_dir().join("mindkit_pilot"));
    let _ = std::fs::remove_dir_all(&out);

    let config_path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/synthetic.conf");
    // The pilot drives the same config file users run with.
    let body = std::fs::read_to_string(config_path).expect("shipped config");
    println!("pilot configuration ({config_path}):\n{body}");

    let synth = mindkit_core::dataio::synthetic::SyntheticConfig {
        n_train: 500,
        n_test: 100,
        n_voxels: 512,
        seed: 7,
        ..Default::default()
    };
    mindkit_core::dataio::synthetic::generate_synthetic_dataset(&synth, &out).unwrap();
    let train = Dataset::load(&out.join("train")).unwrap();
    let test = Dataset::load(&out.join("test")).unwrap();
    println!("dataset: {} train / {} test, {} voxels", train.n_samples(), test.n_samples(), 512);

    let embedder = encoders::embedder("toy").unwrap();
    let tokenizer = encoders::tokenizer("toy").unwrap();
    let conditioner = encoders::conditioner("toy").unwrap();
    let flow = BlockMatchingFlow::default();

    // Stage 1: semantic decoder.
    let t0 = Instant::now();
    let semantic_cfg = mindkit_core::semantic::SemanticConfig {
        epochs: 30,
        batch_size: 32,
        lr: 1.2e-3,
        trunk_hidden: 384,
        head_hidden: 32,
        ..Default::default()
    };
    let semantic = train_semantic(
        &train,
        embedder.as_ref(),
        conditioner.as_ref(),
        &semantic_cfg,
        &AugmentationPolicy::default(),
        7,
    )
    .unwrap();
    println!("semantic trained in {:.1}s", t0.elapsed().as_secs_f64());

    // Retrieval over the test stimulus set.
    let queries = semantic.state.decode_embeddings(&test.fmri).unwrap();
    let mut candidates = Mat::zeros(test.n_samples(), embedder.dim());
    for i in 0..test.n_samples() {
        candidates.row_mut(i).copy_from_slice(&embedder.embed_video(&test.clip(i)));
    }
    let truth: Vec<usize> = (0..test.n_samples()).collect();
    let report = retrieval(&queries, &candidates, &truth, &[1, 10]).unwrap();
    let top1 = report.top_k[0].1;
    let chance = 1.0 / test.n_samples() as f64;
    println!("\ncriterion 5a: retrieval");
    check("test top-1 accuracy vs 5x chance", top1, 5.0 * chance, true);

    // Stage 2: structure decoder.
    let t0 = Instant::now();
    let structure_cfg = mindkit_core::structure::StructureConfig {
        epochs: 150,
        batch_size: 32,
        lr: 2e-3,
        hidden: 384,
        ..Default::default()
    };
    let structure = train_structure(&train, tokenizer.as_ref(), &structure_cfg, 7).unwrap();
    println!("structure trained in {:.1}s", t0.elapsed().as_secs_f64());
    check(
        "structure val MSE / target variance",
        structure.history.last().unwrap().val_loss / structure.val_target_variance,
        0.10,
        false,
    );

    // Stage 3: motion generator, three arms.
    let cmg_cfg = CmgConfig {
        layers: 4,
        d_model: 64,
        n_heads: 8,
        ffn_hidden: 96,
        n_memory: 4,
        epochs: 50,
        batch_size: 24,
        lr: 2e-3,
        warmup_steps: 20,
        ..Default::default()
    };
    let t0 = Instant::now();
    let guided = train_cmg(&train, tokenizer.as_ref(), &cmg_cfg, 7).unwrap();
    println!("guided cmg trained in {:.1}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let unguided_cfg = CmgConfig { fmri_guidance: false, ..cmg_cfg.clone() };
    let unguided = train_cmg(&train, tokenizer.as_ref(), &unguided_cfg, 7).unwrap();
    println!("unguided cmg trained in {:.1}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    let baseline = train_per_frame_mlp(&train, tokenizer.as_ref(), 96, &cmg_cfg, 7).unwrap();
    println!("per-frame baseline trained in {:.1}s", t0.elapsed().as_secs_f64());

    let (h, w) = test.manifest.frame_size;
    let generator = frame_generator("toy", Arc::clone(&tokenizer), h, w).unwrap();
    let recon_guided =
        cmg_reconstructions(&guided.state, &test, &structure.state, tokenizer.as_ref(), generator.as_ref()).unwrap();
    let recon_unguided =
        cmg_reconstructions(&unguided.state, &test, &structure.state, tokenizer.as_ref(), generator.as_ref()).unwrap();
    let recon_mlp =
        mlp_reconstructions(&baseline, &test, &structure.state, tokenizer.as_ref(), generator.as_ref()).unwrap();

    let epe_of = |recon: &[mindkit_core::dataio::VideoClip]| -> Vec<f64> {
        (0..test.n_samples())
            .map(|i| mindkit_core::evaluation::epe(&test.clip(i), &recon[i], &flow).unwrap())
            .collect()
    };
    let epe_guided = mean(&epe_of(&recon_guided));
    let epe_unguided = mean(&epe_of(&recon_unguided));
    let epe_mlp = mean(&epe_of(&recon_mlp));
    println!("\ncriterion 5b/5c: EPE orderings");
    check("guided CMG mean EPE below per-frame MLP", epe_guided, epe_mlp, false);
    check("guided CMG mean EPE below unguided", epe_guided, epe_unguided, false);
    println!(
        "  (guided {epe_guided:.4}, per-frame {epe_mlp:.4}, unguided {epe_unguided:.4})"
    );

    // Criterion 6: shuffle tests.
    let gt: Vec<mindkit_core::dataio::VideoClip> =
        (0..test.n_samples()).map(|i| test.clip(i)).collect();
    let perfect = shuffle_test(
        &gt, &gt, ShuffleMetric::Epe, 100, 0.6, 1, embedder.as_ref(), &flow, 7,
    )
    .unwrap();
    println!("\ncriterion 6: shuffle test");
    check("perfect-order mean EPE P-value", perfect.mean_p(), 0.05, false);

    // Criterion 8: importance AUC is exercised in the analysis tests; a
    // structure-map sanity print keeps the pilot informative.
    let map = structure_importance(&structure.state).unwrap();
    println!(
        "\nstructure importance: {} voxels, max weight {:.3}",
        map.weights.len(),
        map.weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    );

    println!("\npilot finished in {:.1}s", started.elapsed().as_secs_f64());
    let _ = std::fs::remove_dir_all(&out);
}
