use thiserror::Error;

/// Errors raised by operators, solvers and the experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty data: the observation vector is zero")]
    EmptyData,

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("iteration already broken down ({0:?})")]
    BrokenState(crate::qgkb::BreakdownCause),

    #[error("operator does not provide {0}")]
    MissingCapability(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
