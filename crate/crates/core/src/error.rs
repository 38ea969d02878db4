use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported operation `{0}` in differentiable functional")]
    UnsupportedOp(String),

    #[error("no record at epoch {epoch}, t {t}")]
    MissingRecord { epoch: u64, t: u64 },

    #[error("duplicate selection at epoch {epoch}, t {t}")]
    DuplicateSelection { epoch: u64, t: u64 },

    #[error("provenance mismatch: records were collected under snapshot {expected}, got {actual}")]
    Provenance { expected: String, actual: String },

    #[error("{features} features exceed the exact Shapley limit of {limit}")]
    Intractable { features: usize, limit: usize },

    #[error("optimization diverged: {0}")]
    Diverged(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
