use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by grid operations, solvers and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left_width}x{left_height} vs {right_width}x{right_height} in {context}")]
    DimensionMismatch {
        left_width: usize,
        left_height: usize,
        right_width: usize,
        right_height: usize,
        context: &'static str,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "grid too small: {width}x{height}, need at least {min_width}x{min_height} for {context}"
    )]
    GridTooSmall {
        width: usize,
        height: usize,
        min_width: usize,
        min_height: usize,
        context: &'static str,
    },

    #[error("cannot shrink flow field from {old_width}x{old_height} to {new_width}x{new_height}")]
    ShrinkingResize {
        old_width: usize,
        old_height: usize,
        new_width: usize,
        new_height: usize,
    },

    #[error(
        "step size check failed: tau*sigma*|K|^2 = {product:.6} >= 1 (norm estimate {norm:.6})"
    )]
    StepSizeViolation { product: f64, norm: f64 },

    #[error("a starting flow is required for the refinement model")]
    MissingInitializer,

    #[error("mask excludes every pixel; metrics are undefined")]
    EmptyMask,

    #[error("failed to read {path}: {reason}")]
    BadImage { path: PathBuf, reason: String },

    #[error("{path}: not a flow file ({reason})")]
    BadFlowFile { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad config line {line} in {path}: {reason}")]
    BadConfig {
        path: PathBuf,
        line: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn dims(
        (lw, lh): (usize, usize),
        (rw, rh): (usize, usize),
        context: &'static str,
    ) -> Self {
        Error::DimensionMismatch {
            left_width: lw,
            left_height: lh,
            right_width: rw,
            right_height: rh,
            context,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
