use thiserror::Error;

/// Errors produced by the watermark pricing library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A model or configuration field failed validation.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    /// An argument lies outside the open domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// The parameters fall outside the finite-value regime handled here.
    #[error("unsupported regime: {0}")]
    Regime(String),

    /// Shooting or bisection failed to produce a separatrix.
    #[error("solver failure: {0}")]
    Solver(String),

    /// The ODE integrator could not continue.
    #[error("numerical failure at s = {s}, h = {h}: {reason}")]
    Numerical { s: f64, h: f64, reason: String },

    /// An operation was invoked on parameters it is not meant for.
    #[error("misuse: {0}")]
    Misuse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        field,
        reason: reason.into(),
    }
}
