use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use crate::pipeline::PipelineConfig;
use crate::toymodel::{ModelDims, SynthTaskConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub hidden: usize,
    pub time_reduction: usize,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            src_vocab: self.src_vocab,
            tgt_vocab: self.tgt_vocab,
            hidden: self.hidden,
            time_reduction: self.time_reduction,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let dims = ModelDims::default();
        Self {
            src_vocab: dims.src_vocab,
            tgt_vocab: dims.tgt_vocab,
            hidden: dims.hidden,
            time_reduction: dims.time_reduction,
            init_seed: 1,
        }
    }
}

/// Artifact locations. Relative paths resolve against the directory of the
/// config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Training corpus (JSONL).
    pub data: PathBuf,
    /// Corpus for `decode` and `eval`; falls back to `data`.
    #[serde(default)]
    pub eval_data: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub hypotheses: PathBuf,
    /// Output of `eval`.
    pub report: PathBuf,
    /// Output of `simulate-latency`.
    pub latency_report: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data: "runs/train.jsonl".into(),
            eval_data: Some("runs/heldout.jsonl".into()),
            checkpoint: "runs/model.ckpt".into(),
            hypotheses: "runs/hypotheses.jsonl".into(),
            report: "runs/report.json".into(),
            latency_report: "runs/latency.json".into(),
        }
    }
}

/// Everything one experiment needs. Every section is required so that all
/// seeds appear in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Utterances written by `gen-data`.
    pub num_utterances: usize,
    pub task: SynthTaskConfig,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub pipeline: PipelineConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_utterances: 2000,
            task: SynthTaskConfig::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            pipeline: PipelineConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> anyhow::Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Loads and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = Self::from_toml_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.paths.resolve(base);
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.task.validate()?;
        self.pipeline.validate()?;
        let m = &self.model;
        if m.src_vocab == 0 || m.tgt_vocab == 0 || m.hidden == 0 || m.time_reduction == 0 {
            bail!("model dimensions must be positive");
        }
        if m.src_vocab != self.task.src_vocab || m.tgt_vocab != self.task.tgt_vocab {
            bail!(
                "model vocabularies ({}, {}) differ from the task's ({}, {})",
                m.src_vocab,
                m.tgt_vocab,
                self.task.src_vocab,
                self.task.tgt_vocab
            );
        }
        if m.time_reduction != self.pipeline.stream.time_reduction {
            bail!(
                "model.time_reduction = {} but pipeline.stream.time_reduction = {}",
                m.time_reduction,
                self.pipeline.stream.time_reduction
            );
        }
        if self.training.batch_size == 0 {
            bail!("training.batch_size must be positive");
        }
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate >= 0.0) {
            bail!("training.learning_rate must be finite and non-negative");
        }
        if self.training.clip_norm.is_nan() || self.training.clip_norm <= 0.0 {
            bail!("training.clip_norm must be positive");
        }
        Ok(())
    }

    /// Replaces the sampling seeds: corpus sampler, initialization and batch
    /// order. The symbol map and the relay stand-in keep their seeds so that
    /// runs with different seeds still face the same task.
    pub fn override_seed(&mut self, seed: u64) {
        self.task.seed = seed;
        self.model.init_seed = seed;
        self.training.seed = seed;
    }

    pub fn eval_data(&self) -> &Path {
        self.paths.eval_data.as_deref().unwrap_or(&self.paths.data)
    }

    /// The effective configuration as JSON, embedded into every artifact.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

impl PathsConfig {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.data);
        if let Some(p) = self.eval_data.as_mut() {
            join(p);
        }
        join(&mut self.checkpoint);
        join(&mut self.hypotheses);
        join(&mut self.report);
        join(&mut self.latency_report);
    }
}
