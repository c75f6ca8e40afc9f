use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::decoders::ScorerKind;
use crate::encoders::{Activation, Composition, EncoderKind};
use crate::sfm::SfmConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("missing required field `{0}`")]
    Missing(&'static str),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("malformed override `{0}` (expected key=value)")]
    Override(String),
    #[error("cannot read config {path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    NodeClassification,
    LinkPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Single representation stream.
    Base,
    /// Node and message streams with self-filter gates.
    Sfgnn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Sfgnn => "sfgnn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(Variant::Base),
            "sfgnn" => Ok(Variant::Sfgnn),
            other => Err(invalid("variant", format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub scorer: ScorerKind,
    pub layers: usize,
    pub dim: usize,
    /// Defaults to tanh for CompGCN and relu otherwise.
    pub activation: Option<Activation>,
    pub composition: Composition,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Mean,
            scorer: ScorerKind::Distmult,
            layers: 2,
            dim: 32,
            activation: None,
            composition: Composition::Multiplication,
        }
    }
}

impl ModelConfig {
    pub fn activation(&self) -> Activation {
        self.activation.unwrap_or(match self.encoder {
            EncoderKind::Compgcn => Activation::Tanh,
            _ => Activation::Relu,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Corruptions per positive triple.
    pub negatives: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 1024,
            lr: 0.001,
            negatives: 10,
            clip_norm: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DebugConfig {
    /// Replace every self-filter gate with this constant.
    pub pin_gates: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub variant: Variant,
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    /// Directory receiving the checkpoint, metric log and report.
    pub output: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sfm: SfmConfig,
    pub debug: DebugConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: Task::LinkPrediction,
            variant: Variant::Sfgnn,
            seed: 0,
            dataset: None,
            output: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sfm: SfmConfig::default(),
            debug: DebugConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` with a dotted key such as `train.lr=0.01`. The
    /// value is read as JSON when it parses, otherwise as a string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Override(assignment.to_string()));
        }
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| invalid(key, "unknown key"))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| invalid(key, e.to_string()))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model.layers < 1 {
            return Err(invalid("model.layers", "must be at least 1"));
        }
        if self.model.dim < 1 {
            return Err(invalid("model.dim", "must be at least 1"));
        }
        if self.train.epochs < 1 {
            return Err(invalid("train.epochs", "must be at least 1"));
        }
        if self.train.batch_size < 1 {
            return Err(invalid("train.batch_size", "must be at least 1"));
        }
        if !(self.train.lr >= 0.0) || !self.train.lr.is_finite() {
            return Err(invalid("train.lr", "must be a finite non-negative number"));
        }
        if !(self.train.clip_norm > 0.0) {
            return Err(invalid("train.clip_norm", "must be positive"));
        }
        if self.task == Task::LinkPrediction && self.train.negatives < 1 {
            return Err(invalid("train.negatives", "must be at least 1 for link prediction"));
        }
        if !(self.sfm.temperature > 0.0) || !self.sfm.temperature.is_finite() {
            return Err(invalid("sfm.temperature", "must be positive"));
        }
        if self.sfm.cap < 1 {
            return Err(invalid("sfm.cap", "must be at least 1"));
        }
        if let Some(p) = self.debug.pin_gates {
            if !p.is_finite() {
                return Err(invalid("debug.pin_gates", "must be finite"));
            }
        }
        Ok(())
    }

    /// Validated dataset directory.
    pub fn dataset_path(&self) -> Result<&Path, ConfigError> {
        self.dataset.as_deref().ok_or(ConfigError::Missing("dataset"))
    }
}
