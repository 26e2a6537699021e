use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A scalar parameter lies outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Shapes or dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Structural(String),

    /// Class counts do not add up to the declared total.
    #[error("class counts sum to {got}, expected {expected}")]
    Count { expected: usize, got: usize },

    #[error("no samples provided")]
    EmptyData,

    /// Input data is malformed or non-finite.
    #[error("bad data: {0}")]
    Data(String),

    /// A `1 + delta` denominator vanished.
    #[error("division by zero: {0}")]
    Division(String),

    /// A factorization failed where theory says it cannot.
    #[error("internal numerical failure: {0}")]
    Internal(String),

    /// An iterative solver stopped before reaching its tolerance.
    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    /// A fit could not be carried out on the supplied profile.
    #[error("fit failed: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn structural(msg: impl Into<String>) -> Error {
    Error::Structural(msg.into())
}
