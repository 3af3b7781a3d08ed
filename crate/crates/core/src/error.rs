use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: invalid training group: {msg}")]
    Validation {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("invalid identifier {0:?}: must be non-empty and contain no whitespace")]
    InvalidId(String),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("query {query}: {msg}")]
    Query { query: String, msg: String },

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("{}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn query(query: impl ToString, msg: impl Into<String>) -> Self {
        Error::Query {
            query: query.to_string(),
            msg: msg.into(),
        }
    }
}
