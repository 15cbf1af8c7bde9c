use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// A model, dataset or run configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an API precondition (non-scalar loss, repeated backward, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is malformed or out of range.
    #[error("data error: {0}")]
    Data(String),

    /// A checkpoint or tensor dump failed validation.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// The model lacks a component required by the request.
    #[error("capability error: {0}")]
    Capability(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Wraps an error with the training position where it surfaced.
    #[error("epoch {epoch}, step {step}: {source}")]
    Training {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    ///
    /// 2 for usage/configuration problems, 3 for data problems, 4 for integrity failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Capability(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Json(_) => 3,
            Error::Integrity(_) => 4,
            Error::Training { source, .. } => source.exit_code(),
            Error::Shape { .. } | Error::Contract(_) => 1,
        }
    }
}
