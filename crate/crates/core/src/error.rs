use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the synthesis pipeline and its I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("sample {index} has zero norm and cannot be normalized")]
    ZeroNormSample { index: usize },

    #[error("sample {index} is not unit-norm (norm {norm})")]
    NotNormalized { index: usize, norm: f64 },

    #[error("every sample degenerated to zero after centering")]
    AllSamplesDegenerate,

    #[error("label {value} at index {index} lies outside [-{bound}, {bound}]")]
    LabelOutOfBound {
        index: usize,
        value: f64,
        bound: f64,
    },

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("class `{0}` has no samples")]
    EmptyClass(String),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}: row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    BadCell {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },

    #[error("{path}: column `{column}` not found")]
    MissingColumn { path: PathBuf, column: String },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter { .. } | Error::DimensionMismatch { .. } => 1,
            Error::NotPsd { .. } | Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
