use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("layout version mismatch for {table}.{attribute}: plan has {plan}, store has {store}")]
    VersionMismatch {
        table: String,
        attribute: String,
        plan: String,
        store: String,
    },

    #[error("range [{lo}, {hi}] is only covered by unbinned top levels; rerun with full scan allowed")]
    BestMatchTooWide { lo: String, hi: String },

    #[error("malformed adversarial view: {0}")]
    MalformedLog(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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
}
