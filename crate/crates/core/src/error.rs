//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by tensor math, training, attacks, defense, and data loading.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{primitive}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        primitive: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{primitive}: produced a non-finite value")]
    NonFinite { primitive: &'static str },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("node {id} was not recorded as a leaf on this tape")]
    UnknownLeaf { id: usize },

    #[error("backward requires a scalar tape output, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training aborted at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error(
        "calibration attack dropped accuracy by {measured:.3}, need at least {required:.3}; \
         rerun with a larger epsilon"
    )]
    Calibration { measured: f64, required: f64 },

    #[error("cleaning failed: {0}")]
    Cleaning(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("idx {path}: bad magic, expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("idx {path}: truncated payload, need {needed} bytes, have {available}")]
    IdxTruncated {
        path: String,
        needed: usize,
        available: usize,
    },

    #[error("idx: image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("idx: requested {limit} samples but the file holds only {available}")]
    IdxLimit { limit: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
