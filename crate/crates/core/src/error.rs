//! Crate-wide error type.
//!
//! Variants are grouped so a caller (notably the CLI) can map them onto
//! stable exit classes: invalid arguments, data/schema problems, and
//! numerical failures.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of the supplied vectors/matrices do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A NaN or infinity reached a numerical operation.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A parameter is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A matrix required to be symmetric is not, beyond tolerance.
    #[error("matrix is not symmetric within tolerance (max asymmetry {max_asymmetry:.3e})")]
    NotSymmetric { max_asymmetry: f64 },

    /// A referenced column does not exist in the bound schema.
    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    /// CSV-level parse failure, with the 1-based line it occurred on.
    #[error("csv error at line {line}: {message}")]
    Csv { line: u64, message: String },

    /// Schema configuration is inconsistent with itself or with the data.
    #[error("schema error: {0}")]
    Schema(String),

    /// General data-content problem (bad values, unseen categories, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A constraint references a group with no members on the binding data.
    #[error("group '{0}' has no members on the binding dataset")]
    EmptyGroup(String),

    /// A row cannot be routed through a tree because a split feature is missing.
    #[error("row {row} cannot be routed: missing value for feature '{feature}'")]
    UnroutableRow { row: usize, feature: String },

    /// Model file is malformed or violates tree invariants.
    #[error("model format error: {0}")]
    ModelFormat(String),

    /// Constraint-specification file is malformed.
    #[error("constraint spec error: {0}")]
    ConstraintSpec(String),

    /// A factorization or solve failed beyond recoverable tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        Error::Csv {
            line,
            message: e.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
