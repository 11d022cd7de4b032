use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tensor norm {norm:e} is at or below the degeneracy threshold")]
    NormTooSmall { norm: f64 },

    #[error("invalid material parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error("{rejected} of {drawn} parameter draws diverged, more than 10%")]
    TooManyRejections { rejected: usize, drawn: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("relative loss undefined: target component {index} is zero")]
    ZeroTarget { index: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("train and test splits share {count} sample ids")]
    SplitLeakage { count: usize },

    #[error("format error at byte {offset} (line {line}): {message}")]
    Format {
        offset: usize,
        line: usize,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(message: impl Into<String>) -> Self {
        Error::Format {
            offset: 0,
            line: 0,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class: 2 usage, 3 data/format, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 2,
            Error::Format { .. }
            | Error::Io { .. }
            | Error::DimensionMismatch { .. }
            | Error::SplitLeakage { .. }
            | Error::InvalidParams(_)
            | Error::ZeroTarget { .. }
            | Error::EmptyBatch => 3,
            Error::NormTooSmall { .. }
            | Error::Diverged { .. }
            | Error::TooManyRejections { .. }
            | Error::NonFiniteLoss { .. } => 4,
        }
    }
}
