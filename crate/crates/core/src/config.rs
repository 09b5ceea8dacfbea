//! Run configuration and its content hash.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::ngram::NGramConfig;
use crate::decay::{DecayOptions, DEFAULT_HALF_LIFE_CAP, DEFAULT_THRESHOLDS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which trained models are also evaluated on other periods.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossEval {
    /// Native evaluation only.
    None,
    /// Models at the reference size are evaluated on every later period.
    #[default]
    ReferenceSize,
    /// Every model is evaluated on every later period.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub min_score: i64,
    /// Periods with fewer words are flagged insufficient.
    pub min_period_words: usize,
    pub dev_min_words: usize,
    pub test_min_words: usize,
    pub ladder_top: usize,
    pub ladder_floor: usize,
    /// Training size of the model whose effectiveness is tracked; the top
    /// rung when unset.
    pub reference_size: Option<usize>,
    /// Seeds tried per training job; the lowest dev loss wins.
    pub training_seeds: Vec<u64>,
    pub cross_eval: CrossEval,
    pub ngram: NGramConfig,
    pub decay: DecayOptions,
    pub significance_thresholds: [f64; 3],
    pub half_life_cap: f64,
    /// Command line of an external backend, if any.
    pub external_backend: Option<String>,
    pub early_stop_patience: usize,
    /// Passed to external backends untouched.
    pub backend_settings: serde_json::Value,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            min_score: 2,
            min_period_words: 200_000,
            dev_min_words: 20_000,
            test_min_words: 20_000,
            ladder_top: 160_000,
            ladder_floor: 5_000,
            reference_size: None,
            training_seeds: vec![0],
            cross_eval: CrossEval::default(),
            ngram: NGramConfig::default(),
            decay: DecayOptions::default(),
            significance_thresholds: DEFAULT_THRESHOLDS,
            half_life_cap: DEFAULT_HALF_LIFE_CAP,
            external_backend: None,
            early_stop_patience: 15,
            backend_settings: serde_json::Value::Null,
        }
    }
}

impl Config {
    /// Full-scale preset: 100M words per period, 2M-word dev and test sets,
    /// a 40M → 1.25M ladder.
    pub fn full_scale() -> Self {
        Self {
            min_period_words: 100_000_000,
            dev_min_words: 2_000_000,
            test_min_words: 2_000_000,
            ladder_top: 40_000_000,
            ladder_floor: 1_250_000,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Config = serde_json::from_str(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.ladder_floor == 0 || self.ladder_top < self.ladder_floor {
            return Err(ConfigError::Invalid(format!(
                "ladder {} → {} is not a descending range",
                self.ladder_top, self.ladder_floor
            )));
        }
        if self.training_seeds.is_empty() {
            return Err(ConfigError::Invalid("training_seeds is empty".into()));
        }
        let t = self.significance_thresholds;
        if !(t[0] > t[1] && t[1] > t[2] && t[2] > 0.0 && t[0] <= 1.0) {
            return Err(ConfigError::Invalid(format!("thresholds {t:?} must be strictly decreasing in (0, 1]")));
        }
        if let Some(r) = self.reference_size {
            if r == 0 {
                return Err(ConfigError::Invalid("reference_size must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn reference_size(&self) -> usize {
        self.reference_size.unwrap_or(self.ladder_top)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// First 12 hex digits of [`Config::hash`], for file headers.
    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }
}
