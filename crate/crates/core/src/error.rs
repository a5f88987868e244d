use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("importance weights degenerate on {degenerate} of {total} data points; raise epsilon or the number of posterior samples")]
    DegenerateWeights { degenerate: usize, total: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("IDX magic mismatch: expected 0x{expected:08x}, found 0x{found:08x}")]
    IdxMagic { expected: u32, found: u32 },

    #[error("IDX file truncated: header promises {expected} bytes, file holds {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX dimensions overflow: {0}")]
    IdxOverflow(String),

    #[error("kernel bandwidth is degenerate: all pooled points coincide")]
    DegenerateBandwidth,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
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

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
