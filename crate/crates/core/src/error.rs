use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point is behind the camera (z = {z}, near = {near})")]
    BehindCamera { z: f64, near: f64 },

    #[error("voxel index out of range for coordinate {coord}")]
    IndexOutOfRange { coord: f64 },

    #[error("submap is empty")]
    EmptySubmap,

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("truncated input: expected {expected} bytes at offset {offset}")]
    Truncated { offset: u64, expected: u64 },

    #[error("degenerate image: zero intensity variance")]
    DegenerateImage,

    #[error("insufficient correspondences: {found} valid, need at least {needed}")]
    InsufficientCorrespondences { found: usize, needed: usize },

    #[error("unreliable pose: {inliers} inliers, need at least {needed}")]
    UnreliablePose { inliers: usize, needed: usize },

    #[error("localization failed at frame {frame}: {reason}")]
    Localization { frame: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training error: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }
}
