use std::io;

use thiserror::Error;

/// Errors produced across the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The operation is undefined for the given input (e.g. PAPR of an all-zero signal).
    #[error("undefined input: {0}")]
    UndefinedInput(String),
    /// The loss gradient vanished at every input coordinate, so no sign step exists.
    #[error("degenerate gradient: loss gradient is zero at every coordinate")]
    DegenerateGradient,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checksum mismatch")]
    Checksum,
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-parsable category used by the CLI.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::UndefinedInput(_) => "undefined-input",
            Error::DegenerateGradient => "degenerate-gradient",
            Error::Parse(_) => "parse",
            Error::Checksum => "checksum",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
