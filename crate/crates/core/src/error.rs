use thiserror::Error;

/// Errors produced by the model, likelihood, estimation and statistics code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("process is already extinct (s0 = 0)")]
    Extinct,

    #[error("likelihood is not finite: {0}")]
    NonFiniteLikelihood(String),

    #[error("malformed observation at step {step}: {detail}")]
    MalformedObservation { step: usize, detail: String },

    #[error("brute-force enumeration refused: {n} events exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("no events in the supplied data")]
    NoEvents,

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
