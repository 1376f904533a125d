use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("{op}: need at least {min} samples, got {n}")]
    DegenerateSample {
        op: &'static str,
        n: usize,
        min: usize,
    },

    #[error("{0}: empty input")]
    EmptyInput(&'static str),

    #[error("matrix is not symmetric (max |m_ij - m_ji| = {max_asymmetry:e})")]
    NotSymmetric { max_asymmetry: f64 },

    #[error("regularized matrix is singular: smallest eigenvalue {eigenvalue:e} <= 1e-12 (raise the ridge)")]
    Singular { eigenvalue: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("{}: expected {expected_bytes} bytes, found {found_bytes}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected_bytes: u64,
        found_bytes: u64,
    },

    #[error("category {category} has {count} samples; at least 2 are needed to split")]
    UnsplittableCategory { category: usize, count: usize },

    #[error("category {class} has no samples")]
    EmptyClass { class: usize },

    #[error("batch of {batch} rows cannot estimate a {k}-dimensional covariance (need batch > k)")]
    BatchTooSmall { batch: usize, k: usize },

    #[error("dataset has {n} samples, fewer than the batch size {batch_size}")]
    DatasetTooSmall { n: usize, batch_size: usize },

    #[error("row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("score at index {index} is NaN")]
    NanScore { index: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Singular { .. }
            | Error::NonFinite { .. }
            | Error::NonFiniteLoss { .. }
            | Error::NanScore { .. } => ErrorKind::Numerical,
            Error::MissingFile { .. } | Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        op: &'static str,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
