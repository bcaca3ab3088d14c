use thiserror::Error;

/// Errors raised by every module of the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, arity, range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// NaN or infinity surfaced where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed text input. Lines are 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Well-formed input with invalid content (bad BIO, unknown label).
    #[error("data error: {0}")]
    Data(String),

    /// Weight surgery could not be carried out as requested.
    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
