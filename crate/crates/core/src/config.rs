//! The run configuration file: one JSON document for every stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::extract::QpaConfig;
use crate::grpo::TrainConfig;
use crate::reward::RewardConfig;

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Number of hashed prompt-feature buckets.
    pub feature_dim: usize,
    pub hash_seed: u64,
    /// Standard deviation of the initial weights; 0 starts from all zeros.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { feature_dim: 64, hash_seed: 0, init_scale: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub transcripts_dir: PathBuf,
    pub dataset_out: PathBuf,
    pub checkpoints_dir: PathBuf,
    pub logs_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            transcripts_dir: "transcripts".into(),
            dataset_out: "data/dataset.jsonl".into(),
            checkpoints_dir: "checkpoints".into(),
            logs_dir: "logs".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds splitting, sampling, shuffling and MCQ construction.
    pub seed: u64,
    pub split_ratios: [f64; 3],
    pub qpa: QpaConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            split_ratios: [0.8, 0.1, 0.1],
            qpa: QpaConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            policy: PolicyConfig::default(),
            paths: Paths::default(),
        }
    }
}

/// Parses a command-line override value: JSON if it parses, else a string.
pub fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, RunConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunConfigError::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, RunConfigError> {
        serde_json::from_str(text).map_err(|e| RunConfigError::Parse(e.to_string()))
    }

    /// Applies `--a.b.c value` style overrides. Every key must already exist.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, RunConfigError> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self).expect("run config serializes");
        for (key, raw) in overrides {
            let mut slot = &mut doc;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|o| o.get_mut(part))
                    .ok_or_else(|| RunConfigError::UnknownKey(key.clone()))?;
            }
            *slot = parse_override_value(raw);
        }
        serde_json::from_value(doc).map_err(|e| RunConfigError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), RunConfigError> {
        let invalid = |e: &dyn std::fmt::Display| RunConfigError::Invalid(e.to_string());
        self.qpa.validate().map_err(|e| invalid(&e))?;
        self.reward.validate().map_err(|e| invalid(&e))?;
        self.train_config().validate().map_err(|e| invalid(&e))?;
        if self.policy.feature_dim == 0 {
            return Err(RunConfigError::Invalid("policy.feature_dim must be positive".into()));
        }
        if !(self.policy.init_scale >= 0.0 && self.policy.init_scale.is_finite()) {
            return Err(RunConfigError::Invalid("policy.init_scale must be non-negative".into()));
        }
        if (self.reward.scaling - self.train.reward_scaling).abs() > 0.0 {
            return Err(RunConfigError::Invalid(format!(
                "reward.scaling ({}) and train.reward_scaling ({}) disagree",
                self.reward.scaling, self.train.reward_scaling
            )));
        }
        if self.train.seed != 0 && self.train.seed != self.seed {
            return Err(RunConfigError::Invalid("set the seed with the top-level \"seed\" key, not train.seed".into()));
        }
        let p = &self.paths;
        for (name, path) in [
            ("transcripts_dir", &p.transcripts_dir),
            ("dataset_out", &p.dataset_out),
            ("checkpoints_dir", &p.checkpoints_dir),
            ("logs_dir", &p.logs_dir),
        ] {
            if path.as_os_str().is_empty() {
                return Err(RunConfigError::Invalid(format!("paths.{name} is empty")));
            }
        }
        Ok(())
    }

    /// The train section with the top-level seed and reward settings folded in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, reward_cfg: self.reward.clone(), ..self.train.clone() }
    }
}
