//! Error and result types shared across the crate.

use thiserror::Error;

/// Errors produced while parsing rule text, reading canonical graphs, or
/// talking to external processes.
#[derive(Debug, Error)]
pub enum Error {
    /// Rule text could not be parsed into a predicate expression.
    #[error("parse error: {0}")]
    Parse(String),

    /// Canonical graph text was malformed.
    #[error("canonical text error at line {line}: {msg}")]
    CanonicalText { line: usize, msg: String },

    /// A git subprocess failed or produced unreadable output.
    #[error("git error: {0}")]
    Git(String),

    /// Intent labeler transport or schema failure.
    #[error("labeler error: {0}")]
    Labeler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code the CLI maps this error to: input parse failures are 2,
    /// everything else is 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::CanonicalText { .. } => 2,
            _ => 1,
        }
    }
}
