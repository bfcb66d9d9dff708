use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature ran out of subdivisions before meeting its tolerance.
    #[error(
        "quadrature did not converge: value {value:e}, error estimate {error_estimate:e} after {subdivisions} subdivisions"
    )]
    NonConvergence {
        value: f64,
        error_estimate: f64,
        subdivisions: usize,
    },

    /// A request would exceed a configured memory or size budget.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// The solver produced a NaN or infinity.
    #[error("non-finite value at t={t}, x={x}, replica {replica}")]
    NonFinite { t: f64, x: f64, replica: u64 },

    /// Malformed input that is not a mathematical domain violation.
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
