//! JSON run configuration with per-field defaults and whole-document validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{SamplingConfig, ScenarioParams};
use crate::model::ModelConfig;
use crate::train_eval::{TrainConfig, TrainSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Sequences written by `gen`.
    pub num_sequences: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { num_sequences: 280 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub dataset_dir: PathBuf,
    pub weights_path: PathBuf,
    pub report_path: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            dataset_dir: PathBuf::from("data"),
            weights_path: PathBuf::from("weights.ntsr"),
            report_path: PathBuf::from("report.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioParams,
    pub generate: GenerateConfig,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub io: IoConfig,
}

/// Protocol presets differing only in window overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Pie,
    Jaad,
}

impl Preset {
    pub fn overlap(self) -> f64 {
        match self {
            Preset::Pie => 0.6,
            Preset::Jaad => 0.8,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pie" => Ok(Preset::Pie),
            "jaad" => Ok(Preset::Jaad),
            other => Err(format!("unknown preset `{other}` (expected pie or jaad)")),
        }
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut c = RunConfig::default();
        c.apply_preset(preset);
        c
    }

    /// The compact two-variant comparison: reduced network, 14 epochs at lr 3e-4.
    pub fn ablation() -> Self {
        let mut c = RunConfig::default();
        c.model = ModelConfig::compact();
        c.train.epochs = 14;
        c.train.optimizer.lr = 3e-4;
        c.train.select_best_val_f1 = true;
        c
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        self.sampling.overlap = preset.overlap();
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            train: self.train.clone(),
            model: self.model.clone(),
            sampling: self.sampling.clone(),
            dataset_dir: self.io.dataset_dir.clone(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.scenario.violations();
        v.extend(self.train_config().violations());
        let m = &self.model;
        if m.frame_channels != crate::data::scenario::CHANNELS {
            v.push(format!(
                "model.frame_channels: scenes have {} channels, got {}",
                crate::data::scenario::CHANNELS,
                m.frame_channels
            ));
        }
        if (m.frame_height, m.frame_width) != (self.scenario.height, self.scenario.width) {
            v.push(format!(
                "model.frame_height/frame_width: {}×{} must match scenario {}×{}",
                m.frame_height, m.frame_width, self.scenario.height, self.scenario.width
            ));
        }
        let s = &self.sampling;
        if self.scenario.event_frame_max < s.tte_min + s.tau.saturating_sub(1) {
            v.push(format!(
                "sampling: no window fits; scenario.event_frame_max {} < tte_min + tau − 1 = {}",
                self.scenario.event_frame_max,
                s.tte_min + s.tau.saturating_sub(1)
            ));
        }
        if self.generate.num_sequences < 3 {
            v.push("generate.num_sequences: need at least 3 sequences to split".into());
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown key at line {line}: {message}")]
    UnknownKey { line: usize, message: String },
    #[error("invalid value at line {line}: {message}")]
    InvalidValue { line: usize, message: String },
    #[error("{} invalid setting(s):\n  {}", .0.len(), .0.join("\n  "))]
    Violations(Vec<String>),
}

/// Parse, default and validate a run config document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        let (line, column, message) = (e.line(), e.column(), e.to_string());
        match e.classify() {
            Category::Syntax | Category::Eof | Category::Io => ConfigError::Syntax { line, column, message },
            Category::Data if message.starts_with("unknown field") => ConfigError::UnknownKey { line, message },
            Category::Data => ConfigError::InvalidValue { line, message },
        }
    })?;
    let v = config.violations();
    if v.is_empty() {
        Ok(config)
    } else {
        Err(ConfigError::Violations(v))
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
    parse_config(&text)
}

/// SHA-256 hex digest of the canonical JSON of `value`.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}
