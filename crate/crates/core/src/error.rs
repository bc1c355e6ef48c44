//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// First-frame orientation points straight along the vertical axis, so
    /// the offset angle between camera and VR frames is undefined.
    #[error("degenerate orientation: planar projection is zero, offset angle undefined")]
    DegenerateOrientation,

    #[error("empty window: no samples in [{t0_ms}, {t0_ms} + {duration_s}s)")]
    EmptyWindow { t0_ms: i64, duration_s: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("frame mismatch: expected {expected} samples, got {actual}")]
    FrameMismatch { expected: String, actual: String },

    #[error("trace alignment mismatch: {0}")]
    AlignmentMismatch(String),

    #[error("degenerate saliency map: all cells are zero")]
    DegenerateSaliency,

    #[error("no overlap between trace samples and fingerprint duration")]
    NoOverlap,

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("degenerate detection statistics: {0}")]
    DegenerateStats(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
