use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, EvalRecord, TrainJob};
use crate::corpus::PeriodId;

/// One line of the JSON-lines run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestEntry {
    Eval(EvalRecord),
    Failed { job: TrainJob, reason: String },
}

/// Append-only JSON-lines store.
///
/// Each entry is serialized to a complete line and written with a single
/// `write_all` on an `O_APPEND` handle, under a process-local lock, so
/// concurrent workers never interleave partial lines.
#[derive(Debug)]
pub struct Manifest {
    path: PathBuf,
    file: Mutex<File>,
}

impl Manifest {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, entry: &ManifestEntry) -> Result<(), BackendError> {
        let mut line = serde_json::to_string(entry)?;
        line.push('\n');
        let mut f = self.file.lock().expect("manifest lock poisoned");
        f.write_all(line.as_bytes())?;
        Ok(())
    }

    /// Read every entry; a missing file reads as empty.
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, BackendError> {
        let path = path.as_ref();
        if !path.exists() {
            return Ok(Vec::new());
        }
        let reader = BufReader::new(File::open(path)?);
        let mut out = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line)?);
        }
        Ok(out)
    }
}

/// Key under which alternative runs (seeds, variants) compete.
pub type BestKey = (String, String, PeriodId, usize, PeriodId);

/// Keep the lowest-dev-loss record per (backend, topic, train period, size,
/// test period). Records without a dev loss compete on test loss.
pub fn best_records<'a>(
    entries: impl IntoIterator<Item = &'a ManifestEntry>,
) -> BTreeMap<BestKey, EvalRecord> {
    let mut best: BTreeMap<BestKey, EvalRecord> = BTreeMap::new();
    for entry in entries {
        let ManifestEntry::Eval(rec) = entry else {
            continue;
        };
        let key = (
            rec.job.backend_id.clone(),
            rec.job.topic.clone(),
            rec.job.train_period,
            rec.job.subset_size,
            rec.test_period,
        );
        let score = |r: &EvalRecord| r.dev_loss.unwrap_or(r.loss);
        match best.get(&key) {
            Some(cur) if score(cur) <= score(rec) => {}
            _ => {
                best.insert(key, rec.clone());
            }
        }
    }
    best
}
