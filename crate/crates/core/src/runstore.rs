//! Run records: the persisted, digest-sealed outcome of one workflow run.
//!
//! Layout: `<out>/runs/<run-id>/record.json`. The digest is SHA-256 over the
//! canonical JSON of the record without `run_id`, `digest`, log timestamps,
//! and the machine-local resolved dataset path.

use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::canonical;
use crate::cv::{EvalReport, LeakViolation};
use crate::error::{Error, Result};
use crate::estimators::FittedPipeline;
use crate::importance::ImportanceReport;
use crate::pipeline::ParamConfig;
use crate::tabular::{SchemaView, SplitIndices};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = concat!("wb/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Load,
    Split,
    Search,
    Fit,
    Score,
    Explain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub phase: Phase,
    pub message: String,
    pub timestamp_ms: u64,
}

/// Ordered event log; sequence numbers are assigned under the lock.
#[derive(Debug, Default)]
pub struct RunLog {
    events: Mutex<Vec<LogEvent>>,
}

impl RunLog {
    pub fn push(&self, phase: Phase, message: impl Into<String>) {
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64);
        let mut events = self.events.lock().unwrap();
        let seq = events.len() as u64;
        events.push(LogEvent {
            seq,
            phase,
            message: message.into(),
            timestamp_ms,
        });
    }

    pub fn events(&self) -> Vec<LogEvent> {
        self.events.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Done,
    Failed,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    /// Path as written in the config.
    pub source: String,
    /// Absolute path the data was read from; not covered by the digest.
    pub resolved_path: String,
    /// Fingerprint of the file as loaded, before roles and row filters.
    pub fingerprint: String,
    pub schema: SchemaView,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reports {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<EvalReport>,
}

/// Leakage audit of the run's access ledger.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub fit_entries: usize,
    pub predict_entries: usize,
    pub violations: Vec<LeakViolation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub tool_version: String,
    /// The config document exactly as submitted.
    pub config: Json,
    pub dataset: DatasetRef,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub log: Vec<LogEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitIndices>,
    pub reports: Reports,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_config: Option<ParamConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub importance: Vec<ImportanceReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<FittedPipeline>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<Artifact>,
    pub audit: Audit,
    pub digest: String,
}

/// Content-addressed id from the run's inputs, so it is known before the
/// run executes.
pub fn run_id(config: &Json, fingerprint: &str, seed: u64) -> Result<String> {
    let key = serde_json::json!({
        "config": config,
        "fingerprint": fingerprint,
        "seed": seed,
        "tool": TOOL_VERSION,
    });
    Ok(canonical::digest(&key, &[])?[..16].to_string())
}

pub fn record_path(out: &Path, run_id: &str) -> PathBuf {
    out.join("runs").join(run_id).join("record.json")
}

impl RunRecord {
    pub fn compute_digest(&self) -> Result<String> {
        let mut v = canonical::to_value(self)?;
        if let Json::Object(map) = &mut v {
            map.remove("run_id");
            map.remove("digest");
            if let Some(ds) = map.get_mut("dataset").and_then(Json::as_object_mut) {
                ds.remove("resolved_path");
            }
            if let Some(Json::Array(log)) = map.get_mut("log") {
                for event in log {
                    if let Some(e) = event.as_object_mut() {
                        e.remove("timestamp_ms");
                    }
                }
            }
        }
        Ok(canonical::sha256_hex(serde_json::to_string(&v)?.as_bytes()))
    }

    pub fn seal(&mut self) -> Result<()> {
        self.digest = self.compute_digest()?;
        Ok(())
    }

    /// True when any fold of any report failed, or the run did not finish.
    pub fn has_failures(&self) -> bool {
        self.status != RunStatus::Done
            || [&self.reports.cv, &self.reports.holdout]
                .into_iter()
                .flatten()
                .any(|r| r.folds.iter().any(|f| f.error.is_some()))
    }

    /// Write `<out>/runs/<run-id>/record.json`, returning its path.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = record_path(out, &self.run_id);
        let dir = path.parent().unwrap();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = serde_json::to_string_pretty(&canonical::to_value(self)?)?;
        let tmp = dir.join("record.json.tmp");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Read a record from a `record.json` path or a run directory.
    pub fn read(path: &Path) -> Result<RunRecord> {
        let file = if path.is_dir() {
            path.join("record.json")
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            message: format!("{}: {e}", file.display()),
        })
    }
}
