use thiserror::Error;

/// Errors produced by sampling, assembly and the experiment pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    #[error(
        "circulant embedding not positive semidefinite after maximum padding \
         (torus {torus:?}, most negative eigenvalue magnitude {most_negative:e})"
    )]
    EmbeddingNotPsd {
        torus: [usize; 2],
        most_negative: f64,
    },

    #[error("{name} = {value} outside [{min}, {max}]")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("restriction factor {factor} does not divide interval counts {intervals:?}")]
    NonDivisibleFactor {
        factor: usize,
        intervals: [usize; 2],
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error(
        "solver did not converge: relative residual {achieved:e} after {iterations} iterations \
         (tolerance {tolerance:e})"
    )]
    SolveDidNotConverge {
        achieved: f64,
        tolerance: f64,
        iterations: usize,
    },

    #[error("rate fit needs at least {needed} levels, got {got}")]
    InsufficientLevels { needed: usize, got: usize },

    #[error("sample {index} voided at level {level}: {reason}")]
    SampleVoided {
        level: usize,
        index: usize,
        reason: String,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
