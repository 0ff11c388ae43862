use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_w}x{left_h} vs {right_w}x{right_h}")]
    DimensionMismatch {
        left_w: usize,
        left_h: usize,
        right_w: usize,
        right_h: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid dimensions {width}x{height}: {reason}")]
    InvalidDimensions {
        width: usize,
        height: usize,
        reason: &'static str,
    },

    #[error("label {label} exceeds object count {max}")]
    LabelOutOfRange { label: u32, max: u32 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("rle runs sum to {got}, expected {expected}")]
    RleLength { got: u64, expected: u64 },

    #[error("memory entry for frame {got} is not newer than frame {last}")]
    OutOfOrder { got: usize, last: usize },

    #[error("frame {index} out of range 0..{len}")]
    FrameOutOfRange { index: usize, len: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("weights: {0}")]
    Weights(String),

    #[error("refiner: {0}")]
    Refiner(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that indicate a broken internal contract rather than bad user input.
    pub fn is_invariant_violation(&self) -> bool {
        matches!(
            self,
            Error::OutOfOrder { .. } | Error::Shape(_) | Error::Config(_)
        )
    }
}
