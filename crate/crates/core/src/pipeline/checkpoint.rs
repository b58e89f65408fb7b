//! Resume support.
//!
//! The checkpoint is a single JSON document:
//!
//! ```text
//! {
//!   "format": "cogforge-checkpoint/v1",
//!   "fingerprint": "<16 hex digits over input records and config>",
//!   "total": <input size>,
//!   "outcomes": [RecordOutcome, ...]   // sorted by input index
//! }
//! ```
//!
//! It is rewritten (temp file + rename) after every completed record, so a
//! crash leaves either the previous or the next consistent state on disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PipelineConfig, RecordOutcome};
use crate::model::CoTRecord;

pub const CHECKPOINT_FORMAT: &str = "cogforge-checkpoint/v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("checkpoint {path} was written for a different input or config")]
    Mismatch { path: PathBuf },
    #[error("checkpoint {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Serialize, Deserialize)]
struct Document {
    format: String,
    fingerprint: String,
    total: usize,
    outcomes: Vec<RecordOutcome>,
}

#[derive(Debug)]
pub struct Checkpoint {
    path: PathBuf,
    fingerprint: String,
    total: usize,
    completed: BTreeMap<String, RecordOutcome>,
}

/// FNV-1a, 64-bit.
fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn fingerprint(dataset: &[CoTRecord], config: &PipelineConfig) -> String {
    let mut hash = 0xcbf2_9ce4_8422_2325;
    for record in dataset {
        hash = fnv1a(serde_json::to_string(record).expect("serializable").as_bytes(), hash);
    }
    let config = PipelineConfig {
        checkpoint: None,
        max_concurrency: 1,
        ..config.clone()
    };
    hash = fnv1a(serde_json::to_string(&config).expect("serializable").as_bytes(), hash);
    format!("{hash:016x}")
}

impl Checkpoint {
    /// Loads `path` if it exists, otherwise starts empty without touching disk.
    pub fn open(path: &Path, dataset: &[CoTRecord], config: &PipelineConfig) -> Result<Self, CheckpointError> {
        let fingerprint = fingerprint(dataset, config);
        let mut ckpt = Self {
            path: path.to_path_buf(),
            fingerprint,
            total: dataset.len(),
            completed: BTreeMap::new(),
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ckpt),
            Err(source) => {
                return Err(CheckpointError::Io {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        let corrupt = |reason: String| CheckpointError::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        let doc: Document = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(corrupt(format!("unknown format tag {:?}", doc.format)));
        }
        if doc.fingerprint != ckpt.fingerprint || doc.total != ckpt.total {
            return Err(CheckpointError::Mismatch {
                path: path.to_path_buf(),
            });
        }
        for outcome in doc.outcomes {
            let id = outcome.trace.id.clone();
            let expected = dataset.get(outcome.index).map(|r| r.id.as_str());
            if expected != Some(id.as_str()) {
                return Err(corrupt(format!(
                    "outcome {id:?} does not match input index {}",
                    outcome.index
                )));
            }
            ckpt.completed.insert(id, outcome);
        }
        Ok(ckpt)
    }

    pub fn completed(&self) -> &BTreeMap<String, RecordOutcome> {
        &self.completed
    }

    pub fn record(&mut self, outcome: RecordOutcome) -> Result<(), CheckpointError> {
        self.completed.insert(outcome.trace.id.clone(), outcome);
        self.flush()
    }

    fn flush(&self) -> Result<(), CheckpointError> {
        let mut outcomes: Vec<RecordOutcome> = self.completed.values().cloned().collect();
        outcomes.sort_by_key(|o| o.index);
        let doc = Document {
            format: CHECKPOINT_FORMAT.to_string(),
            fingerprint: self.fingerprint.clone(),
            total: self.total,
            outcomes,
        };
        let io_err = |source| CheckpointError::Io {
            path: self.path.clone(),
            source,
        };
        let tmp = self.path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&doc).expect("serializable")).map_err(io_err)?;
        std::fs::rename(&tmp, &self.path).map_err(io_err)
    }
}
