use std::io;

use thiserror::Error;

/// Errors raised by the solvers and the experiment layer.
///
/// Explosion of a backward scheme is not an error: it is reported through
/// [`crate::scheme::SchemeOutput::exploded_at`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric overflow on path {path} at step {step} (value {value})")]
    NumericOverflow {
        path: usize,
        step: usize,
        value: f64,
    },

    #[error("implicit solver did not converge on path {path} at step {step} after {iterations} iterations")]
    ImplicitSolver {
        path: usize,
        step: usize,
        iterations: usize,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
