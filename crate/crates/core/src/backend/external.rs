//! Subprocess protocol for external trainers.
//!
//! The toolkit invokes
//!
//! ```text
//! <command> --train <path> --dev <path> --test <path>... --out <path> --seed <n> --config <json-path>
//! ```
//!
//! and the backend writes to `--out`:
//!
//! ```json
//! {"job": {...}, "results": [{"test_period": "2012-10", "loss_nats_per_token": 3.2, "token_count": 2000000}],
//!  "dev_loss": 3.1}
//! ```
//!
//! A test file's period is the name of the directory containing it
//! (`<slices>/<topic>/<period>/test.txt`), and each result row must name one
//! of the periods passed in.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{BackendError, EvalRecord, ManifestEntry, TrainJob};
use crate::corpus::PeriodId;

/// Program plus leading arguments, e.g. `python adapter.py`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl ExternalCommand {
    /// Whitespace-split a command line; no shell quoting is interpreted.
    pub fn parse(line: &str) -> Option<Self> {
        let mut parts = line.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self {
            program,
            args: parts.collect(),
        })
    }

    pub fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Files handed to the backend.
#[derive(Debug, Clone)]
pub struct BackendPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub tests: Vec<PathBuf>,
    pub out: PathBuf,
    pub config: PathBuf,
}

/// Settings written to the `--config` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub job: TrainJob,
    /// Number of words of `train` to use (a prefix).
    pub subset_size: usize,
    pub early_stop_patience: usize,
    /// Backend-specific settings passed through untouched.
    #[serde(default)]
    pub backend: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub test_period: String,
    pub loss_nats_per_token: f64,
    pub token_count: usize,
}

/// Result file written by a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendOutput {
    pub job: serde_json::Value,
    pub results: Vec<ResultRow>,
    pub dev_loss: f64,
}

/// Period a test file belongs to, from its parent directory name.
pub fn period_of_test_path(path: &Path) -> Option<PeriodId> {
    path.parent()?.file_name()?.to_str()?.parse().ok()
}

/// Validate a backend result against the job and expected test periods.
pub fn parse_backend_output(
    raw: &str,
    job: &TrainJob,
    expected: &BTreeSet<PeriodId>,
) -> Result<Vec<EvalRecord>, BackendError> {
    let value: serde_json::Value = serde_json::from_str(raw)?;
    let results = value
        .get("results")
        .and_then(|r| r.as_array())
        .ok_or_else(|| BackendError::Protocol("missing `results` array".into()))?;
    for (i, row) in results.iter().enumerate() {
        for field in ["test_period", "loss_nats_per_token", "token_count"] {
            if row.get(field).is_none() {
                return Err(BackendError::Protocol(format!("results[{i}] lacks `{field}`")));
            }
        }
    }
    let out: BackendOutput = serde_json::from_value(value)
        .map_err(|e| BackendError::Protocol(format!("schema mismatch: {e}")))?;
    if !out.dev_loss.is_finite() || out.dev_loss < 0.0 {
        return Err(BackendError::Protocol(format!("invalid dev_loss {}", out.dev_loss)));
    }
    if out.results.is_empty() {
        return Err(BackendError::Protocol("empty `results`".into()));
    }
    let mut records = Vec::with_capacity(out.results.len());
    for row in out.results {
        let period: PeriodId = row
            .test_period
            .parse()
            .map_err(|_| BackendError::Protocol(format!("bad test_period `{}`", row.test_period)))?;
        if !expected.contains(&period) {
            return Err(BackendError::Protocol(format!("unexpected test_period {period}")));
        }
        if !row.loss_nats_per_token.is_finite() || row.loss_nats_per_token < 0.0 {
            return Err(BackendError::Protocol(format!(
                "loss {} for {period} is not a non-negative number of nats",
                row.loss_nats_per_token
            )));
        }
        if row.token_count == 0 {
            return Err(BackendError::Protocol(format!("zero token_count for {period}")));
        }
        records.push(EvalRecord {
            job: job.clone(),
            test_period: period,
            loss: row.loss_nats_per_token,
            token_count: row.token_count,
            dev_loss: Some(out.dev_loss),
            backend_meta: None,
        });
    }
    Ok(records)
}

/// Run one job through an external backend and parse its result.
pub fn run_external_backend(
    command: &ExternalCommand,
    config: &BackendConfig,
    paths: &BackendPaths,
) -> Result<Vec<EvalRecord>, BackendError> {
    std::fs::write(&paths.config, serde_json::to_string_pretty(config)?)?;
    let mut cmd = Command::new(&command.program);
    cmd.args(&command.args)
        .arg("--train")
        .arg(&paths.train)
        .arg("--dev")
        .arg(&paths.dev)
        .arg("--test")
        .args(&paths.tests)
        .arg("--out")
        .arg(&paths.out)
        .arg("--seed")
        .arg(config.job.seed.to_string())
        .arg("--config")
        .arg(&paths.config);
    let output = cmd.output()?;
    if !output.status.success() {
        return Err(BackendError::ExitStatus {
            command: command.display(),
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let expected: BTreeSet<PeriodId> = paths
        .tests
        .iter()
        .map(|p| {
            period_of_test_path(p).ok_or_else(|| {
                BackendError::Protocol(format!("cannot infer period from {}", p.display()))
            })
        })
        .collect::<Result<_, _>>()?;
    let raw = std::fs::read_to_string(&paths.out)?;
    parse_backend_output(&raw, &config.job, &expected)
}

/// Like [`run_external_backend`] but never fails: errors become a
/// `Failed` manifest entry so the pipeline can continue.
pub fn run_external_job(
    command: &ExternalCommand,
    config: &BackendConfig,
    paths: &BackendPaths,
) -> Vec<ManifestEntry> {
    match run_external_backend(command, config, paths) {
        Ok(records) => records.into_iter().map(ManifestEntry::Eval).collect(),
        Err(e) => {
            log::warn!("job {:?} failed: {e}", config.job);
            vec![ManifestEntry::Failed {
                job: config.job.clone(),
                reason: e.to_string(),
            }]
        }
    }
}
