//! Experiment configuration: one JSON file drives generation, training,
//! evaluation, and sweeps. Parsing is strict — unknown keys are rejected —
//! and all randomness flows from the single top-level seed into named
//! sub-streams.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::distill::DistillConfig;
use crate::models::ModelConfig;
use crate::skim::SkimConfig;
use crate::synthdata::DatasetConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub strategies: Vec<String>,
    /// Timestamps a selection baseline keeps.
    pub select_count: usize,
    pub t_stop: usize,
    pub subsample_factor: usize,
    pub use_recognition_features: bool,
    /// Extra seeds for the random baseline's spread.
    pub random_seeds: Vec<u64>,
    pub lstm_epochs: usize,
    pub lstm_learning_rate: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            strategies: vec![
                "random".into(),
                "uniform".into(),
                "front".into(),
                "center".into(),
                "end".into(),
                "dense".into(),
                "scsampler".into(),
                "lstm".into(),
                "nonrecurrent".into(),
                "ours".into(),
            ],
            select_count: 10,
            t_stop: 10,
            subsample_factor: 1,
            use_recognition_features: false,
            random_seeds: vec![1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
            lstm_epochs: 15,
            lstm_learning_rate: 0.003,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub distill: DistillConfig,
    pub skim: SkimConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            distill: DistillConfig::default(),
            skim: SkimConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parse a config file strictly.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(ConfigError::MissingFile(path.display().to_string()));
        }
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
        Ok(cfg)
    }

    /// Apply CLI overrides and push the top-level seed into every section.
    pub fn resolve(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self.dataset.seed = self.seed;
        self.distill.seed = self.seed;
        self.skim.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        crate::models::Arch::new(&self.model, &self.dataset)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.distill
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.skim.train_steps == 0 || self.skim.batch_size == 0 {
            return Err(ConfigError::Invalid("skim.train_steps and skim.batch_size must be >= 1".into()));
        }
        if self.eval.select_count == 0 || self.eval.t_stop == 0 || self.eval.subsample_factor == 0 {
            return Err(ConfigError::Invalid(
                "eval.select_count, eval.t_stop, eval.subsample_factor must be >= 1".into(),
            ));
        }
        for name in &self.eval.strategies {
            crate::evalbench::Strategy::parse(name).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Serialize the resolved config; written into every output directory so
    /// runs are self-describing and re-parseable.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_json_pretty();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default().to_json_pretty()).unwrap();
        v.as_object_mut().unwrap().insert("surprise".into(), serde_json::json!(1));
        let err = serde_json::from_value::<ExperimentConfig>(v).unwrap_err().to_string();
        assert!(err.contains("surprise"), "{err}");
    }

    #[test]
    fn resolve_pushes_seed_into_sections() {
        let cfg = ExperimentConfig::default().resolve(Some(99), None);
        assert_eq!(cfg.dataset.seed, 99);
        assert_eq!(cfg.distill.seed, 99);
        assert_eq!(cfg.skim.seed, 99);
    }

    #[test]
    fn invalid_strategy_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.eval.strategies.push("warp".into());
        assert!(matches!(cfg.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn missing_file_is_a_distinct_error() {
        let err = ExperimentConfig::load(Path::new("/nonexistent/config.json")).unwrap_err();
        assert!(matches!(err, ConfigError::MissingFile(_)));
    }
}
