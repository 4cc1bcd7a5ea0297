//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Variants are grouped
//! by how the caller is expected to react: [`Error::Config`] means the
//! requested run was rejected up front (usage / validation), everything else
//! is a failure while actually doing the work.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor operands cannot be combined under the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A run configuration (file or CLI flags) failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file had the wrong magic, was truncated, or was otherwise malformed.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the CLI maps this error to.
    ///
    /// Configuration and usage problems exit with 1, runtime failures with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Shorthand for `Error::InvalidArgument` with formatted text.
macro_rules! invalid {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidArgument(format!($($arg)*))
    };
}

/// Shorthand for `Error::Config` with formatted text.
macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Config(format!($($arg)*))
    };
}

pub(crate) use config_err;
pub(crate) use invalid;
