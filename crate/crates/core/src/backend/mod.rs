//! Language-model backends and the run manifest.
//!
//! Every backend reports per-token cross-entropy in nats. The built-in
//! backend is an interpolated n-gram model ([`ngram`]); other trainers plug in
//! through the subprocess protocol in [`external`].

pub mod external;
pub mod manifest;
pub mod ngram;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PeriodId;

pub use manifest::{best_records, Manifest, ManifestEntry};

pub const NGRAM_BACKEND: &str = "ngram";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("training subset is empty")]
    EmptyTrainingSet,
    #[error("evaluation sequence is empty")]
    EmptyTestSet,
    #[error("invalid n-gram configuration: {0}")]
    Config(String),
    #[error("backend `{command}` exited with {status}: {stderr}")]
    ExitStatus {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("backend result rejected: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Identity of one training run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrainJob {
    pub topic: String,
    pub train_period: PeriodId,
    pub subset_size: usize,
    pub backend_id: String,
    pub seed: u64,
}

/// Loss of a trained model on one test period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub job: TrainJob,
    pub test_period: PeriodId,
    /// Mean negative log-likelihood per token, natural log.
    pub loss: f64,
    pub token_count: usize,
    /// Dev-set loss of the same model; used to pick the best run per key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dev_loss: Option<f64>,
    /// Backend-specific details, e.g. tuned interpolation weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend_meta: Option<serde_json::Value>,
}
