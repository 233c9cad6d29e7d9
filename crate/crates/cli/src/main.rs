//! Pipeline orchestrator. One command per stage; exit code 0 on success,
//! 1 on configuration/validation problems, 2 on runtime failures.

mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mindkit_core::error::CoreError;

use crate::commands::Ctx;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mindkit",
    version,
    about = "Two-stage voxel-to-video decoding pipeline with deterministic toy backends"
)]
struct Cli {
    /// Run configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root; every artifact path is relative to it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset (and optionally a raw acquisition).
    Synth {
        /// Also emit the raw acquisition layout for `prepare`.
        #[arg(long)]
        raw: bool,
    },
    /// Turn a raw acquisition into a prepared dataset split.
    Prepare {
        /// Raw acquisition directory, relative to --out.
        #[arg(long, default_value = "raw")]
        from: String,
        /// Prepared output directory, relative to --out.
        #[arg(long, default_value = "dataset-prepared")]
        to: String,
    },
    /// Train one decoding stage (or all three).
    Train {
        #[arg(long)]
        stage: String,
    },
    /// Decode the test split and generate pixel reconstructions.
    Reconstruct {
        /// Replace a decoded feature with Gaussian noise
        /// (semantic=noise | structure=noise); repeatable.
        #[arg(long)]
        substitute: Vec<String>,
    },
    /// Compute the metric report for the stored reconstructions.
    Evaluate,
    /// Rank the stimulus set by decoded embeddings.
    Retrieve,
    /// Interpretability analyses.
    Analyze {
        /// shuffle | importance | ablation-guidance | ablation-motion
        #[arg(long)]
        kind: String,
        /// ROI spec (JSON with per-voxel labels and a name table).
        #[arg(long)]
        roi_labels: Option<PathBuf>,
    },
}

fn validation_error(err: &anyhow::Error) -> bool {
    if let Some(core) = err.downcast_ref::<CoreError>() {
        return matches!(
            core,
            CoreError::InvalidArgument(_)
                | CoreError::ShapeMismatch { .. }
                | CoreError::Manifest { .. }
                | CoreError::UnknownBackend { .. }
                | CoreError::MissingArtifact { .. }
        );
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return false;
    }
    // Config parsing and CLI-level argument problems.
    true
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::try_parse().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let mut c = RunConfig::defaults();
            c.apply_env()?;
            c
        }
    };
    let ctx = Ctx::new(config, cli.out.clone());
    match &cli.command {
        Command::Synth { raw } => commands::cmd_synth(&ctx, *raw),
        Command::Prepare { from, to } => commands::cmd_prepare(&ctx, from, to),
        Command::Train { stage } => commands::cmd_train(&ctx, stage),
        Command::Reconstruct { substitute } => commands::cmd_reconstruct(&ctx, substitute),
        Command::Evaluate => commands::cmd_evaluate(&ctx),
        Command::Retrieve => commands::cmd_retrieve(&ctx),
        Command::Analyze { kind, roi_labels } => {
            commands::cmd_analyze(&ctx, kind, roi_labels.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if validation_error(&err) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
