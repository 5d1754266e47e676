use std::io;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, parameters or experiment settings that cannot be honoured.
    #[error("configuration error: {0}")]
    Config(String),
    /// A value outside the domain of a mathematical operation (e.g. log of a non-positive entry).
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    /// An internal guarantee was broken, such as a non-finite iNALU output.
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
