use std::path::PathBuf;

use thiserror::Error;

use crate::activations::DumpError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("template error: {0}")]
    Template(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("data error in {key}: {msg}")]
    Data { key: String, msg: String },

    #[error("{}: {kind}", path.display())]
    Dump { path: PathBuf, kind: DumpError },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty class: {0}")]
    EmptyClass(String),

    #[error("degenerate vector: {0} has zero norm")]
    DegenerateVector(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for validation failures, 2 for I/O and parse failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Dump { .. } | Error::Io { .. } | Error::Json { .. } => 2,
            _ => 1,
        }
    }
}
