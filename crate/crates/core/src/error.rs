use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bucket {bucket} out of range for {buckets} buckets")]
    BucketOutOfRange { bucket: usize, buckets: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,

    #[error("label {label} outside [0, {classes})")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("{step}: value out of range: {detail}")]
    OutOfRange { step: &'static str, detail: String },

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u8, found: u8 },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("checkpoint tensors do not match model: missing {missing:?}, unexpected {extra:?}")]
    TensorMismatch { missing: Vec<String>, extra: Vec<String> },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("non-finite loss at step {step}: {value}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
