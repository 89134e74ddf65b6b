//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown benchmark `{0}` (expected one of HJB, BSB, AC, BZ, PIDE)")]
    UnknownBenchmark(String),
    #[error("benchmark {benchmark} has no parameter `{param}`")]
    UnknownParameter { benchmark: String, param: String },
    #[error("problem {0} has no analytic solution")]
    NoAnalyticSolution(String),
    #[error("problem {0} is fully coupled and needs the current value y")]
    MissingCoupling(String),
    #[error("problem {0} has no jump specification")]
    MissingJumpSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("incompatible configuration: {0}")]
    Incompatible(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training aborted at iteration {iteration}: {source}")]
    Aborted { iteration: usize, source: Box<Error> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
