//! Crate-wide error type.
//!
//! Variants are grouped by the process exit class the CLI maps them to:
//! configuration/argument problems, data problems, and numerical failures.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument to an operation (bad group index, shape mismatch, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration file or override problem.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset ingest or image decode problem.
    #[error("data error: {0}")]
    Data(String),

    /// NaN or divergence during optimization.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Checkpoint archive problem.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class: 2 config/argument, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } | Error::Checkpoint(_) => 3,
            Error::Numerical(_) => 4,
        }
    }

    /// Single-line machine-parseable class tag, printed on CLI failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Numerical(_) => "numerical",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
        }
    }
}
