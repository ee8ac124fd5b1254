use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KkmError>;

#[derive(Debug, Error)]
pub enum KkmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every point coincides, so the bandwidth estimate collapses to zero.
    #[error("degenerate bandwidth: all points are identical")]
    DegenerateBandwidth,

    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),

    /// Exhaustive search was asked for an instance outside its guard rails.
    #[error("brute-force enumeration refused: {0}")]
    Refused(String),

    #[error("{path}: format error at {location}: {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl KkmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        KkmError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KkmError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        KkmError::Format {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
