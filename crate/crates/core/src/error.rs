use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the support or parameter space.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// Malformed input file. `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A cell that fails validation, reported with its coordinates.
    #[error("invalid value at row {row}, column {column}: {msg}")]
    InvalidCell { row: usize, column: String, msg: String },

    /// Rows whose totals are too small for down-sampling (0-based indices).
    #[error("rows with total below target {target}: {rows:?}")]
    InsufficientDepth { target: u64, rows: Vec<usize> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by the caller's inputs rather than a failure
    /// inside the computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}
