use thiserror::Error;

/// Errors raised by the factor-model engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: dimension mismatches, out-of-range indices.
    #[error("argument error: {0}")]
    Argument(String),

    /// A value outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// A chain state that violates its own invariants.
    #[error("state corruption: {0}")]
    State(String),

    /// Loss of positive-definiteness or a failed factorization inside a sampler.
    #[error("numerical failure in {block} at iteration {iteration}: {message}")]
    Numerical {
        iteration: usize,
        block: String,
        message: String,
    },

    /// A construction that should be impossible; indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn numerical(block: &str, message: impl Into<String>) -> Self {
        Error::Numerical {
            iteration: 0,
            block: block.to_string(),
            message: message.into(),
        }
    }

    /// Attach the sampler iteration to a numerical error raised deep inside a block.
    pub fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Numerical { block, message, .. } => Error::Numerical {
                iteration,
                block,
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
