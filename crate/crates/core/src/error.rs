use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("initial data not admissible: {0}")]
    Inadmissible(String),

    #[error("solution blew up at step {step} (t = {t}): {reason}")]
    BlowUp { step: usize, t: f64, reason: String },

    #[error("outside the smallness window: budget {budget} exceeds 1/2 at t = {t}")]
    OutsideWindow { budget: f64, t: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("output sink failed: {0}")]
    Sink(String),
}
