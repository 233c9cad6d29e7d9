//! One function per pipeline stage. Every stage reads the validated run
//! configuration, writes its artifacts under the output root, and drops a
//! config snapshot plus a run log next to them so each artifact directory
//! is self-describing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mindkit_core::analysis::{
    cmg_motion_ablation, guidance_ablation, roi_importance, semantic_importance, shuffle_test,
    structure_importance, ImportanceMap, ShuffleMetric,
};
use mindkit_core::cmg::train::train_cmg;
use mindkit_core::cmg::CmgState;
use mindkit_core::container::{self, ArrayMeta};
use mindkit_core::dataio::raw::{generate_raw_acquisition, prepare};
use mindkit_core::dataio::synthetic::generate_synthetic_dataset;
use mindkit_core::dataio::{Dataset, VideoClip};
use mindkit_core::encoders::{self, CONDITION_COLS, CONDITION_ROWS};
use mindkit_core::error::CoreError;
use mindkit_core::evaluation::{classifier, evaluate_clips, flow_backend, retrieval, EvalOptions};
use mindkit_core::generator::{frame_generator, reconstruct_video, GenerationRequest};
use mindkit_core::nn::{rng_for, subseed};
use mindkit_core::semantic::{history_csv, train_semantic, SemanticDecoderState};
use mindkit_core::structure::{train_structure, StructureDecoderState};
use mindkit_core::Mat;
use rand::Rng;

use crate::config::RunConfig;
use crate::plot;

pub struct Ctx {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Ctx {
    pub fn new(config: RunConfig, out: PathBuf) -> Self {
        Ctx { config, out }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join(self.config.text("dataset.path"))
    }

    pub fn state_dir(&self, stage: &str) -> PathBuf {
        self.out.join("states").join(stage)
    }

    pub fn recon_dir(&self) -> PathBuf {
        self.out.join("recon")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn analysis_dir(&self) -> PathBuf {
        self.out.join("analysis")
    }

    pub fn plots_dir(&self) -> PathBuf {
        self.out.join("plots")
    }

    fn version_string(&self) -> String {
        format!("mindkit-{}", env!("CARGO_PKG_VERSION"))
    }

    /// Config snapshot + run log inside an artifact directory.
    fn describe(&self, dir: &Path, command: &str, extra: serde_json::Value) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config_snapshot.conf"), self.config.canonical())?;
        let log = serde_json::json!({
            "command": command,
            "config_hash": format!("{:016x}", self.config.hash()),
            "seed": self.config.seed(),
            "version": self.version_string(),
            "detail": extra,
        });
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&log)? + "\n")?;
        Ok(())
    }

    fn load_split(&self, split: &str) -> Result<Dataset> {
        let dir = self.dataset_dir().join(split);
        Dataset::load(&dir).map_err(|e| match e {
            CoreError::Io { .. } => anyhow::Error::new(CoreError::MissingArtifact {
                stage: "synth".into(),
                detail: format!("dataset split '{split}' not found at {}; run `mindkit synth` first", dir.display()),
            }),
            other => anyhow::Error::new(other),
        })
    }

    fn load_semantic(&self) -> Result<SemanticDecoderState> {
        let dir = self.state_dir("semantic");
        SemanticDecoderState::load(&dir).map_err(|_| {
            anyhow::Error::new(CoreError::MissingArtifact {
                stage: "train semantic".into(),
                detail: format!("no semantic decoder state at {}; run `mindkit train --stage semantic`", dir.display()),
            })
        })
    }

    fn load_structure(&self) -> Result<StructureDecoderState> {
        let dir = self.state_dir("structure");
        StructureDecoderState::load(&dir).map_err(|_| {
            anyhow::Error::new(CoreError::MissingArtifact {
                stage: "train structure".into(),
                detail: format!("no structure decoder state at {}; run `mindkit train --stage structure`", dir.display()),
            })
        })
    }

    fn load_cmg(&self) -> Result<CmgState> {
        let dir = self.state_dir("cmg");
        CmgState::load(&dir).map_err(|_| {
            anyhow::Error::new(CoreError::MissingArtifact {
                stage: "train cmg".into(),
                detail: format!("no motion generator state at {}; run `mindkit train --stage cmg`", dir.display()),
            })
        })
    }
}

// ---------------------------------------------------------------------------
// synth / prepare
// ---------------------------------------------------------------------------

pub fn cmd_synth(ctx: &Ctx, raw: bool) -> Result<()> {
    let cfg = ctx.config.synthetic();
    let dataset_dir = ctx.dataset_dir();
    generate_synthetic_dataset(&cfg, &dataset_dir)?;
    ctx.describe(&dataset_dir, "synth", serde_json::json!({"raw": raw}))?;
    println!("synth: wrote {} train / {} test samples to {}", cfg.n_train, cfg.n_test, dataset_dir.display());
    if raw {
        let raw_dir = ctx.out.join("raw");
        generate_raw_acquisition(&cfg, &raw_dir)?;
        ctx.describe(&raw_dir, "synth --raw", serde_json::json!({}))?;
        println!("synth: wrote raw acquisition to {}", raw_dir.display());
    }
    Ok(())
}

pub fn cmd_prepare(ctx: &Ctx, raw_rel: &str, to_rel: &str) -> Result<()> {
    let raw_dir = ctx.out.join(raw_rel);
    if !raw_dir.join("manifest.json").exists() {
        bail!(CoreError::MissingArtifact {
            stage: "synth --raw".into(),
            detail: format!("no raw acquisition at {}; run `mindkit synth --raw` first", raw_dir.display()),
        });
    }
    let out_dir = ctx.out.join(to_rel);
    let embedder = encoders::embedder(&ctx.config.text("backends.embedder"))?;
    let manifest = prepare(&raw_dir, &out_dir, embedder.as_ref(), ctx.config.seed())?;
    ctx.describe(&out_dir, "prepare", serde_json::json!({"n_samples": manifest.n_samples}))?;
    println!("prepare: {} samples, {} voxels -> {}", manifest.n_samples, manifest.n_voxels, out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(ctx: &Ctx, stage: &str) -> Result<()> {
    match stage {
        "semantic" => train_stage_semantic(ctx),
        "structure" => train_stage_structure(ctx),
        "cmg" => train_stage_cmg(ctx),
        "all" => {
            train_stage_semantic(ctx)?;
            train_stage_structure(ctx)?;
            train_stage_cmg(ctx)
        }
        other => bail!("unknown training stage '{other}' (semantic | structure | cmg | all)"),
    }
}

fn train_stage_semantic(ctx: &Ctx) -> Result<()> {
    let train = ctx.load_split("train")?;
    let embedder = encoders::embedder(&ctx.config.text("backends.embedder"))?;
    let conditioner = encoders::conditioner(&ctx.config.text("backends.conditioner"))?;
    let policy = mindkit_core::semantic::augment::AugmentationPolicy::default();
    let out = train_semantic(
        &train,
        embedder.as_ref(),
        conditioner.as_ref(),
        &ctx.config.semantic(),
        &policy,
        ctx.config.seed(),
    )?;
    let dir = ctx.state_dir("semantic");
    out.state.save(&dir)?;
    std::fs::write(dir.join("loss_history.csv"), history_csv(&out.history))?;
    let train_curve: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
    let val_curve: Vec<f64> = out.history.iter().map(|h| h.val_loss).collect();
    plot::line_chart(
        &ctx.plots_dir().join("loss_semantic.png"),
        &[("train", train_curve), ("val", val_curve)],
    )?;
    ctx.describe(&dir, "train semantic", serde_json::json!({"epochs": out.history.len()}))?;
    if let Some(last) = out.history.last() {
        println!("train semantic: {} epochs, final train {:.4} val {:.4}", out.history.len(), last.train_loss, last.val_loss);
    }
    Ok(())
}

fn train_stage_structure(ctx: &Ctx) -> Result<()> {
    let train = ctx.load_split("train")?;
    let tokenizer = encoders::tokenizer(&ctx.config.text("backends.tokenizer"))?;
    let out = train_structure(&train, tokenizer.as_ref(), &ctx.config.structure(), ctx.config.seed())?;
    let dir = ctx.state_dir("structure");
    out.state.save(&dir)?;
    std::fs::write(dir.join("loss_history.csv"), history_csv(&out.history))?;
    let train_curve: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
    let val_curve: Vec<f64> = out.history.iter().map(|h| h.val_loss).collect();
    plot::line_chart(
        &ctx.plots_dir().join("loss_structure.png"),
        &[("train", train_curve), ("val", val_curve)],
    )?;
    ctx.describe(
        &dir,
        "train structure",
        serde_json::json!({"val_target_variance": out.val_target_variance}),
    )?;
    if let Some(last) = out.history.last() {
        println!("train structure: {} epochs, final train {:.4} val {:.4}", out.history.len(), last.train_loss, last.val_loss);
    }
    Ok(())
}

fn train_stage_cmg(ctx: &Ctx) -> Result<()> {
    let train = ctx.load_split("train")?;
    let tokenizer = encoders::tokenizer(&ctx.config.text("backends.tokenizer"))?;
    let out = train_cmg(&train, tokenizer.as_ref(), &ctx.config.cmg()?, ctx.config.seed())?;
    let dir = ctx.state_dir("cmg");
    out.state.save(&dir)?;
    std::fs::write(dir.join("loss_history.csv"), history_csv(&out.history))?;
    let train_curve: Vec<f64> = out.history.iter().map(|h| h.train_loss).collect();
    let val_curve: Vec<f64> = out.history.iter().map(|h| h.val_loss).collect();
    plot::line_chart(
        &ctx.plots_dir().join("loss_cmg.png"),
        &[("train", train_curve), ("val", val_curve)],
    )?;
    ctx.describe(&dir, "train cmg", serde_json::json!({"epochs": out.history.len()}))?;
    if let Some(last) = out.history.last() {
        println!("train cmg: {} epochs, final train {:.4} val {:.4}", out.history.len(), last.train_loss, last.val_loss);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconClipEntry {
    pub frames: ArrayMeta,
    pub tokens: ArrayMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconManifest {
    pub n_samples: usize,
    pub frames_per_clip: usize,
    pub height: usize,
    pub width: usize,
    /// FNV hash of each decoder-state manifest used for this reconstruction.
    pub state_versions: BTreeMap<String, String>,
    pub config_hash: String,
    pub seed: u64,
    pub substitute: Vec<String>,
    pub clips: Vec<ReconClipEntry>,
}

fn state_version(dir: &Path) -> Result<String> {
    Ok(format!("{:016x}", container::hash_file(&dir.join("manifest.json"))?))
}

/// Reconstruct the test split. `substitute` entries like "semantic=noise"
/// replace a decoded feature with seeded Gaussian noise (the feature
/// ablation arms).
pub fn cmd_reconstruct(ctx: &Ctx, substitute: &[String]) -> Result<()> {
    for s in substitute {
        if s != "semantic=noise" && s != "structure=noise" {
            bail!("unsupported --substitute '{s}' (semantic=noise | structure=noise)");
        }
    }
    let sub_semantic = substitute.iter().any(|s| s == "semantic=noise");
    let sub_structure = substitute.iter().any(|s| s == "structure=noise");

    let test = ctx.load_split("test")?;
    let semantic = ctx.load_semantic()?;
    let structure = ctx.load_structure()?;
    let cmg = ctx.load_cmg()?;
    let tokenizer = encoders::tokenizer(&ctx.config.text("backends.tokenizer"))?;
    let (h, w) = test.manifest.frame_size;
    let generator = frame_generator(
        &ctx.config.text("backends.generator"),
        Arc::clone(&tokenizer),
        h,
        w,
    )?;

    let n_frames = test.manifest.frames_per_clip;
    let seed = ctx.config.seed();
    let recon_dir = ctx.recon_dir();
    std::fs::create_dir_all(&recon_dir)?;

    let mut clips = Vec::with_capacity(test.n_samples());
    let mut noise_rng = rng_for(seed, "reconstruct.substitute");
    for i in 0..test.n_samples() {
        let voxels = test.fmri.row(i);
        let (_f, mut condition) = semantic.decode(voxels)?;
        if sub_semantic {
            condition = Mat {
                rows: CONDITION_ROWS,
                cols: CONDITION_COLS,
                data: (0..CONDITION_ROWS * CONDITION_COLS)
                    .map(|_| noise_rng.gen_range(-1.0..1.0))
                    .collect(),
            };
        }
        let mut latent = structure.decode(voxels)?;
        if sub_structure {
            for v in latent.iter_mut() {
                *v = noise_rng.gen_range(-1.0..1.0);
            }
        }
        let first_tokens = tokenizer.tokenize(&latent)?;
        let motion = cmg.generate_motion(&first_tokens, voxels, n_frames)?;

        let mut request = GenerationRequest::new(condition, motion, subseed(seed, &format!("gen{i}")));
        request.smoothing_steps = ctx.config.uint("generation.smoothing_steps");
        request.inversion_steps = ctx.config.uint("generation.inversion_steps");
        let clip = reconstruct_video(&request, generator.as_ref(), tokenizer.as_ref(), h, w, i)?;

        // Persist: 8-bit frames plus the motion tokens.
        let clip_dir = recon_dir.join(format!("clip_{i:04}"));
        let mut frames_meta =
            container::write_u8(&clip_dir, "frames", &[n_frames, 3, h, w], &clip.to_u8())?;
        frames_meta.file = format!("clip_{i:04}/{}", frames_meta.file);
        let flat_tokens: Vec<f64> = request
            .motion_tokens
            .iter()
            .flatten()
            .flatten()
            .copied()
            .collect();
        let t_pf = tokenizer.tokens_per_frame(h, w);
        let mut tokens_meta = container::write_f32(
            &clip_dir,
            "tokens",
            &[n_frames, t_pf, tokenizer.token_dim()],
            &flat_tokens,
        )?;
        tokens_meta.file = format!("clip_{i:04}/{}", tokens_meta.file);
        clips.push(ReconClipEntry { frames: frames_meta, tokens: tokens_meta });
    }

    let manifest = ReconManifest {
        n_samples: test.n_samples(),
        frames_per_clip: n_frames,
        height: h,
        width: w,
        state_versions: BTreeMap::from([
            ("semantic".to_string(), state_version(&ctx.state_dir("semantic"))?),
            ("structure".to_string(), state_version(&ctx.state_dir("structure"))?),
            ("cmg".to_string(), state_version(&ctx.state_dir("cmg"))?),
        ]),
        config_hash: format!("{:016x}", ctx.config.hash()),
        seed,
        substitute: substitute.to_vec(),
        clips,
    };
    container::save_json(&recon_dir.join("manifest.json"), &manifest)?;
    ctx.describe(&recon_dir, "reconstruct", serde_json::json!({"substitute": substitute}))?;
    println!("reconstruct: {} clips -> {}", manifest.n_samples, recon_dir.display());
    Ok(())
}

/// Load reconstructed clips back from a recon directory.
pub fn load_recon(dir: &Path) -> Result<Vec<VideoClip>> {
    let manifest: ReconManifest = container::load_json(&dir.join("manifest.json"))
        .map_err(|_| {
            anyhow::Error::new(CoreError::MissingArtifact {
                stage: "reconstruct".into(),
                detail: format!("no reconstruction at {}; run `mindkit reconstruct`", dir.display()),
            })
        })?;
    let mut clips = Vec::with_capacity(manifest.n_samples);
    for (i, entry) in manifest.clips.iter().enumerate() {
        let raw = container::read_u8(dir, &entry.frames)?;
        let mut clip = VideoClip::new(i, manifest.frames_per_clip, manifest.height, manifest.width);
        for (dst, &src) in clip.pixels.iter_mut().zip(raw.iter()) {
            *dst = src as f64 / 255.0;
        }
        clips.push(clip);
    }
    Ok(clips)
}

// ---------------------------------------------------------------------------
// evaluate / retrieve
// ---------------------------------------------------------------------------

pub fn cmd_evaluate(ctx: &Ctx) -> Result<()> {
    let test = ctx.load_split("test")?;
    let recon = load_recon(&ctx.recon_dir())?;
    if recon.len() != test.n_samples() {
        bail!(
            "reconstruction has {} clips but the test split has {}",
            recon.len(),
            test.n_samples()
        );
    }
    let gt: Vec<VideoClip> = (0..test.n_samples()).map(|i| test.clip(i)).collect();
    let embedder = encoders::embedder(&ctx.config.text("backends.embedder"))?;
    let clf = classifier(&ctx.config.text("backends.classifier"))?;
    let flow = flow_backend(&ctx.config.text("backends.flow"))?;
    let opts = EvalOptions {
        nway_n: ctx.config.uint("eval.nway_n"),
        nway_trials: ctx.config.uint("eval.nway_trials"),
        n_boot: ctx.config.uint("eval.n_boot"),
        gate: ctx.config.float("eval.gate"),
        seed: ctx.config.seed(),
    };
    let report = evaluate_clips(&gt, &recon, embedder.as_ref(), clf.as_ref(), flow.as_ref(), &opts)?;

    let reports = ctx.reports_dir();
    container::save_json(&reports.join("metrics.json"), &report)?;
    std::fs::write(reports.join("metrics.csv"), report.to_csv())?;
    let bars: Vec<(String, f64)> = report
        .aggregates
        .iter()
        .map(|(k, v)| (k.clone(), v.mean))
        .collect();
    plot::bar_chart(&ctx.plots_dir().join("metrics_means.png"), &bars)?;
    ctx.describe(&reports, "evaluate", serde_json::json!({"n_samples": report.per_sample.len()}))?;
    println!("evaluate: {} samples", report.per_sample.len());
    for (name, agg) in &report.aggregates {
        println!("  {name:>10}: {:+.4} [{:+.4}, {:+.4}]", agg.mean, agg.ci_lo, agg.ci_hi);
    }
    Ok(())
}

pub fn cmd_retrieve(ctx: &Ctx) -> Result<()> {
    let test = ctx.load_split("test")?;
    let semantic = ctx.load_semantic()?;
    let embedder = encoders::embedder(&ctx.config.text("backends.embedder"))?;

    let queries = semantic.decode_embeddings(&test.fmri)?;
    let dim = embedder.dim();
    let mut candidates = Mat::zeros(test.n_samples(), dim);
    for i in 0..test.n_samples() {
        candidates
            .row_mut(i)
            .copy_from_slice(&embedder.embed_video(&test.clip(i)));
    }
    let truth: Vec<usize> = (0..test.n_samples()).collect();
    let k_list = ctx.config.top_k_list()?;
    let report = retrieval(&queries, &candidates, &truth, &k_list)?;

    let reports = ctx.reports_dir();
    container::save_json(&reports.join("retrieval.json"), &report)?;
    ctx.describe(&reports, "retrieve", serde_json::json!({"k_list": k_list}))?;
    for (k, acc) in &report.top_k {
        println!(
            "retrieve: top-{k} accuracy {:.2}% (chance {:.2}%)",
            100.0 * acc,
            100.0 * *k as f64 / report.n_candidates as f64
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoiSpec {
    pub labels: Vec<usize>,
    pub names: BTreeMap<usize, String>,
}

pub fn cmd_analyze(ctx: &Ctx, kind: &str, roi_labels: Option<&Path>) -> Result<()> {
    match kind {
        "shuffle" => analyze_shuffle(ctx),
        "importance" => analyze_importance(ctx, roi_labels),
        "ablation-guidance" => analyze_guidance(ctx),
        "ablation-motion" => analyze_motion(ctx),
        other => bail!(
            "unknown analysis kind '{other}' (shuffle | importance | ablation-guidance | ablation-motion)"
        ),
    }
}

fn analyze_shuffle(ctx: &Ctx) -> Result<()> {
    let test = ctx.load_split("test")?;
    let recon = load_recon(&ctx.recon_dir())?;
    let gt: Vec<VideoClip> = (0..test.n_samples()).map(|i| test.clip(i)).collect();
    let embedder = encoders::embedder(&ctx.config.text("backends.embedder"))?;
    let flow = flow_backend(&ctx.config.text("backends.flow"))?;
    let n_shuffles = ctx.config.uint("analysis.n_shuffles");
    let repeats = ctx.config.uint("analysis.repeats");
    let gate = ctx.config.float("eval.gate");
    let seed = ctx.config.seed();

    let epe = shuffle_test(
        &recon, &gt, ShuffleMetric::Epe, n_shuffles, gate, repeats,
        embedder.as_ref(), flow.as_ref(), seed,
    )?;
    let clip = shuffle_test(
        &recon, &gt, ShuffleMetric::ClipPcc, n_shuffles, gate, repeats,
        embedder.as_ref(), flow.as_ref(), seed,
    )?;
    let dir = ctx.analysis_dir();
    container::save_json(
        &dir.join("shuffle.json"),
        &serde_json::json!({
            "epe": epe,
            "clip_pcc": clip,
            "epe_mean_p": epe.mean_p(),
            "clip_pcc_mean_p": clip.mean_p(),
        }),
    )?;
    ctx.describe(&dir, "analyze shuffle", serde_json::json!({"gated": epe.gated_sample_ids.len()}))?;
    println!(
        "analyze shuffle: {} gated samples, mean P epe {:.3} clip_pcc {:.3}",
        epe.gated_sample_ids.len(),
        epe.mean_p(),
        clip.mean_p()
    );
    Ok(())
}

fn analyze_importance(ctx: &Ctx, roi_labels: Option<&Path>) -> Result<()> {
    let dir = ctx.analysis_dir();
    std::fs::create_dir_all(&dir)?;
    let roi: Option<RoiSpec> = match roi_labels {
        Some(path) => Some(
            serde_json::from_str(&std::fs::read_to_string(path)?)
                .with_context(|| format!("parsing ROI spec {}", path.display()))?,
        ),
        None => None,
    };

    let emit = |kind: &str, map: ImportanceMap| -> Result<()> {
        container::write_f32(&dir, &format!("importance_{kind}"), &[map.weights.len()], &map.weights)?;
        let mut payload = serde_json::json!({
            "decoder_kind": map.decoder_kind,
            "n_voxels": map.weights.len(),
        });
        if let Some(spec) = &roi {
            let (means, warnings) = roi_importance(&map, &spec.labels, &spec.names, true)?;
            for warning in &warnings {
                eprintln!("warning: {warning}");
            }
            payload["roi_means"] = serde_json::to_value(&means)?;
            payload["roi_warnings"] = serde_json::to_value(&warnings)?;
        }
        container::save_json(&dir.join(format!("importance_{kind}.json")), &payload)?;
        plot::heat_map(&ctx.plots_dir().join(format!("importance_{kind}.png")), &map.weights)?;
        Ok(())
    };

    emit("semantic", semantic_importance(&ctx.load_semantic()?)?)?;
    emit("structure", structure_importance(&ctx.load_structure()?)?)?;
    ctx.describe(&dir, "analyze importance", serde_json::json!({"roi": roi.is_some()}))?;
    println!("analyze importance: maps written to {}", dir.display());
    Ok(())
}

fn analyze_guidance(ctx: &Ctx) -> Result<()> {
    let train = ctx.load_split("train")?;
    let test = ctx.load_split("test")?;
    let structure = ctx.load_structure()?;
    let tokenizer = encoders::tokenizer(&ctx.config.text("backends.tokenizer"))?;
    let (h, w) = test.manifest.frame_size;
    let generator = frame_generator(
        &ctx.config.text("backends.generator"),
        Arc::clone(&tokenizer),
        h,
        w,
    )?;
    let flow = flow_backend(&ctx.config.text("backends.flow"))?;
    let result = guidance_ablation(
        &train,
        &test,
        &structure,
        tokenizer.as_ref(),
        generator.as_ref(),
        flow.as_ref(),
        &ctx.config.cmg()?,
        ctx.config.seed(),
    )?;
    let dir = ctx.analysis_dir();
    container::save_json(&dir.join("ablation_guidance.json"), &result)?;
    ctx.describe(&dir, "analyze ablation-guidance", serde_json::json!({}))?;
    println!(
        "analyze ablation-guidance: mean EPE {} {:.4} vs {} {:.4}",
        result.arm_a,
        result.mean_a(),
        result.arm_b,
        result.mean_b()
    );
    Ok(())
}

fn analyze_motion(ctx: &Ctx) -> Result<()> {
    let train = ctx.load_split("train")?;
    let test = ctx.load_split("test")?;
    let structure = ctx.load_structure()?;
    let tokenizer = encoders::tokenizer(&ctx.config.text("backends.tokenizer"))?;
    let (h, w) = test.manifest.frame_size;
    let generator = frame_generator(
        &ctx.config.text("backends.generator"),
        Arc::clone(&tokenizer),
        h,
        w,
    )?;
    let flow = flow_backend(&ctx.config.text("backends.flow"))?;
    let result = cmg_motion_ablation(
        &train,
        &test,
        &structure,
        tokenizer.as_ref(),
        generator.as_ref(),
        flow.as_ref(),
        &ctx.config.cmg()?,
        ctx.config.uint("analysis.baseline_hidden"),
        ctx.config.seed(),
    )?;
    let dir = ctx.analysis_dir();
    container::save_json(&dir.join("ablation_motion.json"), &result)?;
    ctx.describe(&dir, "analyze ablation-motion", serde_json::json!({}))?;
    println!(
        "analyze ablation-motion: mean EPE {} {:.4} vs {} {:.4}",
        result.arm_a,
        result.mean_a(),
        result.arm_b,
        result.mean_b()
    );
    Ok(())
}

