//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. The CLI maps error kinds to
//! distinct process exit codes (see [`Error::exit_code`]) so scripts can tell
//! configuration mistakes from data problems from numeric failures.

/// Unified error type for the whole crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shape mismatch; message names the operation and the offending dims.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid model or training configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data (CSV schema, parse failures, empty sets).
    #[error("data error: {0}")]
    Data(String),

    /// Evaluation-protocol misuse (e.g. a subject-wise split of single-subject data).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Non-finite values or other numeric breakdowns during training/inference.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Corrupt, truncated, or incompatible model files.
    #[error("model format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 = config, 3 = data, 4 = numeric, 1 = other.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) => 2,
            Error::Data(_) | Error::Protocol(_) | Error::Format(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
