use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use episodic_core::datagen::GeneratorParams;
use episodic_core::learners::{Algorithm, LearnerConfig};
use episodic_core::sampler::{ProposalMode, SchemeKind, DEFAULT_LAMBDA};
use episodic_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Environment variable naming the directory that relative output paths are
/// resolved against.
pub const OUTPUT_ROOT_ENV: &str = "EPISODIC_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetBlock,
    pub learner: LearnerBlock,
    #[serde(default)]
    pub train: TrainBlock,
    #[serde(default)]
    pub scheme: SchemeBlock,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetBlock {
    /// Directory holding `train/`, `val/` and `test/` splits.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Used by `gen-data`, and by the other commands when `path` is unset.
    #[serde(default)]
    pub generator: Option<GeneratorParams>,
    /// Class counts for train / val / test; they must add up to the total.
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [64.0, 16.0, 20.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerBlock {
    pub algorithm: Algorithm,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_embed")]
    pub embed_dim: usize,
    #[serde(default = "default_cosine_scale")]
    pub cosine_scale: f64,
    #[serde(default)]
    pub adaptation_rate: Option<f64>,
    #[serde(default)]
    pub adaptation_steps: Option<usize>,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_embed() -> usize {
    64
}
fn default_cosine_scale() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub validation_interval: usize,
    pub validation_episodes: usize,
    pub test_episodes: usize,
    pub way: usize,
    pub shot: usize,
    pub query: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            iterations: d.iterations,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            validation_interval: d.validation_interval,
            validation_episodes: d.validation_episodes,
            test_episodes: d.test_episodes,
            way: d.way,
            shot: d.shot,
            query: d.query,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeBlock {
    pub kind: SchemeKind,
    pub mode: ProposalMode,
    pub lambda: f64,
    pub warmup_iterations: usize,
    /// Pre-trained checkpoint scoring difficulties in offline mode.
    pub proposal_checkpoint: Option<PathBuf>,
    pub offline_episodes: usize,
}

impl Default for SchemeBlock {
    fn default() -> Self {
        Self {
            kind: SchemeKind::Baseline,
            mode: ProposalMode::Online,
            lambda: DEFAULT_LAMBDA,
            warmup_iterations: 100,
            proposal_checkpoint: None,
            offline_episodes: 1000,
        }
    }
}

impl ExperimentConfig {
    /// Reads a JSON config and applies `key.path = value` overrides before
    /// deserializing, so unknown keys are rejected either way.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Self::from_value(value, overrides).with_context(|| format!("config {}", path.display()))
    }

    pub fn from_value(mut value: Value, overrides: &[(String, String)]) -> Result<Self> {
        for (key, raw) in overrides {
            crate::overrides::apply(&mut value, key, raw)?;
        }
        let cfg: ExperimentConfig = serde_path_error(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.is_none() && self.dataset.generator.is_none() {
            bail!("dataset: set `path` or `generator`");
        }
        if self.scheme.mode == ProposalMode::Offline && self.scheme.proposal_checkpoint.is_none() {
            bail!("scheme.proposal_checkpoint is required in offline mode");
        }
        if self.learner.algorithm == Algorithm::ProtoCosine && !self.learner.cosine_scale.is_finite() {
            bail!("learner.cosine_scale must be finite");
        }
        self.train_config().validate().context("train")?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            validation_interval: t.validation_interval,
            validation_episodes: t.validation_episodes,
            test_episodes: t.test_episodes,
            way: t.way,
            shot: t.shot,
            query: t.query,
            scheme: self.scheme.kind,
            mode: self.scheme.mode,
            lambda: self.scheme.lambda,
            warmup_iterations: self.scheme.warmup_iterations,
            offline_episodes: self.scheme.offline_episodes,
            seed: self.seed,
        }
    }

    pub fn learner_config(&self, input_dim: usize) -> LearnerConfig {
        let l = &self.learner;
        LearnerConfig {
            algorithm: l.algorithm,
            input_dim,
            hidden: l.hidden.clone(),
            embed_dim: l.embed_dim,
            way: self.train.way,
            cosine_scale: l.cosine_scale,
            adaptation_rate: l.adaptation_rate,
            adaptation_steps: l.adaptation_steps,
        }
    }

    /// `output_dir`, placed under `$EPISODIC_OUTPUT_ROOT` when relative.
    pub fn output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Deserializes with the offending key path in the error message.
fn serde_path_error(value: Value) -> Result<ExperimentConfig> {
    // serde_json reports missing/unknown fields by name but not by path;
    // walk the blocks so the message names e.g. `dataset.generator`.
    let obj = value
        .as_object()
        .ok_or_else(|| anyhow::anyhow!("config must be a JSON object"))?;
    if let Some(g) = obj.get("dataset").and_then(|d| d.get("generator")) {
        if !g.is_null() {
            check_block::<GeneratorParams>(g).context("in `dataset.generator`")?;
        }
    }
    for (block, check) in [
        ("dataset", check_block::<DatasetBlock> as fn(&Value) -> Result<()>),
        ("learner", check_block::<LearnerBlock>),
        ("train", check_block::<TrainBlock>),
        ("scheme", check_block::<SchemeBlock>),
    ] {
        if let Some(v) = obj.get(block) {
            check(v).with_context(|| format!("in `{block}`"))?;
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn check_block<T: serde::de::DeserializeOwned>(v: &Value) -> Result<()> {
    serde_json::from_value::<T>(v.clone())?;
    Ok(())
}
