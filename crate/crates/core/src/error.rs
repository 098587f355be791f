//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-visible precondition was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A point-cloud text file failed to parse.
    #[error("parse error: line {line}: {msg}")]
    CloudParse { line: usize, msg: String },

    /// The binary weight file is malformed.
    #[error("weight format error: {0}")]
    WeightFormat(String),

    /// A configuration file or preset name was rejected.
    #[error("config error: {0}")]
    Config(String),

    /// A resolution pyramid collapsed to zero points at the named scale.
    #[error("degenerate input: scale {scale} has no points")]
    DegenerateScale { scale: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
