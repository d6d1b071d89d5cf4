use thiserror::Error;

/// Failure classes shared by every module of the crate.
///
/// The variants map one-to-one onto the exit-code classes used by the
/// command line front end (configuration, numerical failure, heavy tails).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PamError {
    /// Invalid parameters or a violated precondition of a covariance family.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quadrature or solver did not reach the requested tolerance.
    #[error("numerical error: {message} (achieved tolerance {achieved:e})")]
    Numerical { message: String, achieved: f64 },

    /// A Monte Carlo exponent exceeded the overflow cap.
    #[error(
        "heavy-tail abort: exponent {exponent:.3} exceeded cap {cap} at sample {sample}; \
         the integrand is too intermittent for plain Monte Carlo at this budget"
    )]
    HeavyTail { exponent: f64, cap: f64, sample: u64 },
}

impl PamError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        PamError::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PamError::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, achieved: f64) -> Self {
        PamError::Numerical {
            message: msg.into(),
            achieved,
        }
    }
}

pub type Result<T> = std::result::Result<T, PamError>;
