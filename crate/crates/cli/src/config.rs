//! Run configuration: a flat key-value file validated against a schema,
//! with environment overrides under the MINDKIT_ prefix. Unknown keys are
//! rejected so typos fail loudly before any stage runs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use mindkit_core::cmg::{CmgConfig, CmgVariant};
use mindkit_core::dataio::synthetic::SyntheticConfig;
use mindkit_core::semantic::SemanticConfig;
use mindkit_core::structure::StructureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    UInt,
    Float,
    Bool,
    Text,
}

/// Schema: every legal key with its type and its default. The defaults are
/// the published training hyperparameters; desk-scale runs override them
/// through the config file.
const SCHEMA: &[(&str, Kind, &str)] = &[
    ("seed", Kind::UInt, "7"),
    ("dataset.path", Kind::Text, "dataset"),
    ("dataset.name", Kind::Text, "synthetic"),
    ("dataset.n_train", Kind::UInt, "500"),
    ("dataset.n_test", Kind::UInt, "100"),
    ("dataset.n_voxels", Kind::UInt, "512"),
    ("dataset.frames_per_clip", Kind::UInt, "8"),
    ("dataset.frame_size", Kind::UInt, "64"),
    ("dataset.max_speed", Kind::UInt, "2"),
    ("dataset.noise_level", Kind::Float, "0"),
    ("dataset.block_aligned", Kind::Bool, "false"),
    ("backends.embedder", Kind::Text, "toy"),
    ("backends.tokenizer", Kind::Text, "toy"),
    ("backends.conditioner", Kind::Text, "toy"),
    ("backends.classifier", Kind::Text, "toy"),
    ("backends.flow", Kind::Text, "block"),
    ("backends.generator", Kind::Text, "toy"),
    ("semantic.epochs", Kind::UInt, "100"),
    ("semantic.batch_size", Kind::UInt, "64"),
    ("semantic.lr", Kind::Float, "2e-4"),
    ("semantic.alpha", Kind::Float, "0.5"),
    ("semantic.lambda1", Kind::Float, "0.01"),
    ("semantic.lambda2", Kind::Float, "0.5"),
    ("semantic.tau_init", Kind::Float, "0.07"),
    ("semantic.weight_decay", Kind::Float, "1e-4"),
    ("semantic.trunk_hidden", Kind::UInt, "512"),
    ("semantic.head_hidden", Kind::UInt, "128"),
    ("semantic.val_fraction", Kind::Float, "0.1"),
    ("structure.epochs", Kind::UInt, "100"),
    ("structure.batch_size", Kind::UInt, "64"),
    ("structure.lr", Kind::Float, "1e-6"),
    ("structure.warmup_steps", Kind::UInt, "50"),
    ("structure.hidden", Kind::UInt, "256"),
    ("structure.weight_decay", Kind::Float, "1e-4"),
    ("structure.val_fraction", Kind::Float, "0.1"),
    ("cmg.epochs", Kind::UInt, "300"),
    ("cmg.batch_size", Kind::UInt, "64"),
    ("cmg.lr", Kind::Float, "4e-5"),
    ("cmg.warmup_steps", Kind::UInt, "50"),
    ("cmg.layers", Kind::UInt, "4"),
    ("cmg.d_model", Kind::UInt, "64"),
    ("cmg.n_heads", Kind::UInt, "8"),
    ("cmg.ffn_hidden", Kind::UInt, "128"),
    ("cmg.n_memory", Kind::UInt, "4"),
    ("cmg.mask_ratio", Kind::Float, "0.6"),
    ("cmg.token_scale", Kind::Float, "0.125"),
    ("cmg.variant", Kind::Text, "cross_attention"),
    ("cmg.fmri_guidance", Kind::Bool, "true"),
    ("cmg.weight_decay", Kind::Float, "1e-4"),
    ("cmg.val_fraction", Kind::Float, "0.1"),
    ("eval.nway_n", Kind::UInt, "2"),
    ("eval.nway_trials", Kind::UInt, "100"),
    ("eval.n_boot", Kind::UInt, "100"),
    ("eval.gate", Kind::Float, "0.6"),
    ("analysis.n_shuffles", Kind::UInt, "100"),
    ("analysis.repeats", Kind::UInt, "5"),
    ("analysis.baseline_hidden", Kind::UInt, "96"),
    ("generation.smoothing_steps", Kind::UInt, "250"),
    ("generation.inversion_steps", Kind::UInt, "50"),
    ("retrieve.top_k", Kind::Text, "1,10,100"),
];

pub const ENV_PREFIX: &str = "MINDKIT_";

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn defaults() -> Self {
        let values = SCHEMA
            .iter()
            .map(|(k, _, d)| (k.to_string(), d.to_string()))
            .collect();
        RunConfig { values }
    }

    /// Load a key = value file, validate against the schema, then apply
    /// MINDKIT_* environment overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut config = Self::defaults();
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", path.display(), lineno + 1))?;
            config.set(key.trim(), value.trim()).with_context(|| {
                format!("{}:{}", path.display(), lineno + 1)
            })?;
        }
        config.apply_env()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (_, kind, _) = SCHEMA
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| anyhow!("unknown config key '{key}' (see the schema in the README)"))?;
        match kind {
            Kind::UInt => {
                value
                    .parse::<u64>()
                    .map_err(|_| anyhow!("key '{key}' expects an unsigned integer, got '{value}'"))?;
            }
            Kind::Float => {
                value
                    .parse::<f64>()
                    .map_err(|_| anyhow!("key '{key}' expects a number, got '{value}'"))?;
            }
            Kind::Bool => {
                value
                    .parse::<bool>()
                    .map_err(|_| anyhow!("key '{key}' expects true/false, got '{value}'"))?;
            }
            Kind::Text => {}
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<()> {
        for (key, _, _) in SCHEMA {
            if let Ok(value) = std::env::var(env_name(key)) {
                self.set(key, &value)
                    .with_context(|| format!("environment override {}", env_name(key)))?;
            }
        }
        Ok(())
    }

    pub fn text(&self, key: &str) -> String {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("key {key} missing from schema"))
            .clone()
    }

    pub fn uint(&self, key: &str) -> usize {
        self.text(key).parse().unwrap()
    }

    pub fn float(&self, key: &str) -> f64 {
        self.text(key).parse().unwrap()
    }

    pub fn bool(&self, key: &str) -> bool {
        self.text(key).parse().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.text("seed").parse().unwrap()
    }

    /// Canonical serialization: sorted key = value lines.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn hash(&self) -> u64 {
        mindkit_core::container::fnv1a(self.canonical().as_bytes())
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            name: self.text("dataset.name"),
            n_train: self.uint("dataset.n_train"),
            n_test: self.uint("dataset.n_test"),
            n_voxels: self.uint("dataset.n_voxels"),
            frames_per_clip: self.uint("dataset.frames_per_clip"),
            frame_size: self.uint("dataset.frame_size"),
            max_speed: self.uint("dataset.max_speed") as i32,
            block_aligned: self.bool("dataset.block_aligned"),
            noise_level: self.float("dataset.noise_level"),
            seed: self.seed(),
        }
    }

    pub fn semantic(&self) -> SemanticConfig {
        SemanticConfig {
            epochs: self.uint("semantic.epochs"),
            batch_size: self.uint("semantic.batch_size"),
            lr: self.float("semantic.lr"),
            alpha: self.float("semantic.alpha"),
            lambda1: self.float("semantic.lambda1"),
            lambda2: self.float("semantic.lambda2"),
            tau_init: self.float("semantic.tau_init"),
            weight_decay: self.float("semantic.weight_decay"),
            trunk_hidden: self.uint("semantic.trunk_hidden"),
            head_hidden: self.uint("semantic.head_hidden"),
            val_fraction: self.float("semantic.val_fraction"),
        }
    }

    pub fn structure(&self) -> StructureConfig {
        StructureConfig {
            epochs: self.uint("structure.epochs"),
            batch_size: self.uint("structure.batch_size"),
            lr: self.float("structure.lr"),
            warmup_steps: self.uint("structure.warmup_steps"),
            hidden: self.uint("structure.hidden"),
            weight_decay: self.float("structure.weight_decay"),
            val_fraction: self.float("structure.val_fraction"),
        }
    }

    pub fn cmg(&self) -> Result<CmgConfig> {
        Ok(CmgConfig {
            layers: self.uint("cmg.layers"),
            d_model: self.uint("cmg.d_model"),
            n_heads: self.uint("cmg.n_heads"),
            ffn_hidden: self.uint("cmg.ffn_hidden"),
            n_memory: self.uint("cmg.n_memory"),
            mask_ratio: self.float("cmg.mask_ratio"),
            token_scale: self.float("cmg.token_scale"),
            variant: CmgVariant::parse(&self.text("cmg.variant"))
                .map_err(|e| anyhow!("{e}"))?,
            fmri_guidance: self.bool("cmg.fmri_guidance"),
            epochs: self.uint("cmg.epochs"),
            batch_size: self.uint("cmg.batch_size"),
            lr: self.float("cmg.lr"),
            warmup_steps: self.uint("cmg.warmup_steps"),
            weight_decay: self.float("cmg.weight_decay"),
            val_fraction: self.float("cmg.val_fraction"),
        })
    }

    pub fn top_k_list(&self) -> Result<Vec<usize>> {
        let raw = self.text("retrieve.top_k");
        let mut out = Vec::new();
        for part in raw.split(',') {
            let k: usize = part
                .trim()
                .parse()
                .map_err(|_| anyhow!("retrieve.top_k entry '{part}' is not an integer"))?;
            if k == 0 {
                bail!("retrieve.top_k entries must be >= 1");
            }
            out.push(k);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_published_hyperparameters() {
        let c = RunConfig::defaults();
        assert_eq!(c.float("semantic.alpha"), 0.5);
        assert_eq!(c.float("semantic.lambda1"), 0.01);
        assert_eq!(c.float("semantic.lambda2"), 0.5);
        assert_eq!(c.uint("semantic.epochs"), 100);
        assert_eq!(c.float("semantic.lr"), 2e-4);
        assert_eq!(c.float("structure.lr"), 1e-6);
        assert_eq!(c.uint("structure.warmup_steps"), 50);
        assert_eq!(c.uint("cmg.epochs"), 300);
        assert_eq!(c.float("cmg.lr"), 4e-5);
        assert_eq!(c.float("cmg.mask_ratio"), 0.6);
        assert_eq!(c.uint("generation.smoothing_steps"), 250);
        assert_eq!(c.uint("generation.inversion_steps"), 50);
        assert_eq!(c.uint("eval.n_boot"), 100);
        assert_eq!(c.float("eval.gate"), 0.6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::defaults();
        assert!(c.set("semantic.epoch", "10").is_err());
        assert!(c.set("semantic.epochs", "ten").is_err());
        assert!(c.set("semantic.epochs", "10").is_ok());
    }

    #[test]
    fn env_override_names_are_prefixed_and_uppercased() {
        assert_eq!(env_name("semantic.batch_size"), "MINDKIT_SEMANTIC_BATCH_SIZE");
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::defaults();
        let mut b = RunConfig::defaults();
        assert_eq!(a.hash(), b.hash());
        b.set("seed", "8").unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
