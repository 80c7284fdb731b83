use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong between reading a dump and printing a report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite even after jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },

    #[error("class {class}: covariance is not positive definite even after jitter {max_jitter:e}")]
    ClassNotPositiveDefinite { class: usize, max_jitter: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),

    #[error("file truncated: {0}")]
    TruncatedFile(String),

    #[error("label {label} at sample {index} is out of range (must be -1 or non-negative)")]
    LabelOutOfRange { index: usize, label: i32 },

    #[error("feature set has no samples")]
    EmptySet,

    #[error("invalid feature set: {0}")]
    InvalidFeatureSet(String),

    #[error("corrupt model archive: {0}")]
    CorruptArchive(String),

    #[error("shape not divisible: {0}")]
    ShapeNotDivisible(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("class {class} has {got} labeled samples, needs at least {needed}")]
    ClassTooSmall { class: usize, got: usize, needed: usize },

    #[error("no labeled samples")]
    NoLabeledSamples,

    #[error("class {class}: every EM restart collapsed for every component count")]
    EmDegenerate { class: usize },

    #[error("class index {class} out of range for a model with {n_classes} classes")]
    BadClassIndex { class: usize, n_classes: usize },

    #[error("operation requires a tied-covariance model, got {0}")]
    WrongKind(&'static str),

    #[error("score table contains unlabeled samples")]
    UnlabeledSamples,

    #[error("score list is empty")]
    EmptyScoreList,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad generator spec: {0}")]
    BadSpec(String),

    #[error("malformed score file: {0}")]
    MalformedScores(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
