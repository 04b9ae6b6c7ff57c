//! Crate-wide error type.
//!
//! The numerical kernels report domain violations as errors rather than NaN
//! so that callers can tell "this analytic branch does not apply" apart from
//! "the computation broke down".

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument was outside the mathematical domain of the operation.
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },

    /// An iterative method (series, continued fraction, quadrature,
    /// bisection) did not reach its target accuracy.
    #[error("{op} did not converge within {limit} steps")]
    Convergence { op: &'static str, limit: usize },

    /// A scenario failed validation.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// An experiment configuration failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// File I/O while reading configs or writing result tables.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Domain {
            op,
            msg: msg.into(),
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
