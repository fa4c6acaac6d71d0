//! Error taxonomy shared across the toolkit.
//!
//! Categories map one-to-one onto CLI exit codes: usage errors exit 1,
//! configuration/data errors exit 2, numeric failures exit 3.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller misuse of an API: wrong argument shapes, stepping a terminal
    /// state, degenerate inputs the contract forbids.
    #[error("usage error: {0}")]
    Usage(String),

    /// Invalid configuration or data: out-of-range parameters, malformed
    /// graphs, inconsistent datasets.
    #[error("configuration error: {0}")]
    Config(String),

    /// A decode failure tied to a specific line of an input file.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Numeric breakdown: divergence, non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 config/data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Config(_) | Error::Parse { .. } | Error::Io(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
