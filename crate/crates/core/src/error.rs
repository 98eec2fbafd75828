use thiserror::Error;

/// Errors produced by the normlens library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate token norm {norm:e} at (n={n}, l={l})")]
    DegenerateNorm { n: usize, l: usize, norm: f64 },

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
