use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("type error: {0}")]
    Type(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("schema mismatch at column `{column}`: {message}")]
    SchemaMismatch { column: String, message: String },

    #[error("metric `{metric}` is undefined: {reason}")]
    UndefinedMetric { metric: String, reason: String },

    #[error("fit failed for `{estimator}`: {message}")]
    Fit { estimator: String, message: String },

    #[error("binding failed at step {step}: {message}")]
    Binding { step: usize, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid config:\n{}", format_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("dataset fingerprint mismatch: {0}")]
    FingerprintMismatch(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cancelled")]
    Cancelled,

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// One itemized problem found while validating a run config.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

fn format_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {}: {}", i.path, i.message))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn fit(estimator: &str, msg: impl Into<String>) -> Self {
        Error::Fit {
            estimator: estimator.to_string(),
            message: msg.into(),
        }
    }
}
