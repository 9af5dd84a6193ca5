use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{}:{line}: {msg}", path.display())]
    Validation {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("non-finite gradient at index {index}; parameters left untouched")]
    PoisonedUpdate { index: usize },

    #[error("tape mismatch: {0}")]
    TapeMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

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
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Version { .. } | Error::Json { .. } => 2,
            Error::Validation { .. } | Error::Degenerate(_) | Error::Shape { .. } => 3,
            Error::Numerical(_) | Error::PoisonedUpdate { .. } => 4,
            Error::TapeMismatch(_) | Error::Io { .. } => 1,
        }
    }
}
