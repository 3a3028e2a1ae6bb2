use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bounding box ({x}, {y}, {w}, {h}): {reason}")]
    InvalidBox {
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        reason: &'static str,
    },

    #[error("empty frame")]
    EmptyFrame,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("weak supervision is not defined on any frame of video {0}")]
    NoWeakLabels(String),

    #[error("no frames selected for evaluation (stride {stride}, {frames} frames)")]
    NoEvaluatedFrames { stride: usize, frames: usize },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    #[error("tracker {tracker} failed on frame {frame}: {detail}")]
    TrackerFailure {
        tracker: String,
        frame: usize,
        detail: String,
    },

    #[error("malformed {what} at {path}:{line}: {detail}")]
    Parse {
        what: &'static str,
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidBox { .. } => "invalid_box",
            Error::EmptyFrame => "empty_frame",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::NoWeakLabels(_) => "no_weak_labels",
            Error::NoEvaluatedFrames { .. } => "no_evaluated_frames",
            Error::Diverged { .. } => "diverged",
            Error::TrackerFailure { .. } => "tracker_failure",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
