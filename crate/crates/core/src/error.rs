use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = MmenError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MmenError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("node {node} out of range (graph has {n} nodes)")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unknown method `{name}`; valid methods: {valid}")]
    UnknownMethod { name: String, valid: String },
}

impl MmenError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MmenError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for data problems, 3 for numeric
    /// failures, 1 for bad usage.
    pub fn exit_code(&self) -> i32 {
        match self {
            MmenError::Numeric(_) => 3,
            MmenError::InvalidParam(_) | MmenError::UnknownMethod { .. } => 1,
            _ => 2,
        }
    }
}
