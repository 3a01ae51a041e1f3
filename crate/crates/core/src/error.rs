use thiserror::Error;

/// Errors raised across the pricing library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("correlation {value} outside [{lo}, {hi}]")]
    CorrelationRange { value: f64, lo: f64, hi: f64 },

    #[error("inconsistent parameters: {0}")]
    Inconsistent(String),

    #[error("correlation undefined at total variance {0:e}")]
    UndefinedCorrelation(f64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("quadrature did not converge: {0}")]
    Accuracy(String),

    #[error("calibration failed after {iterations} iterations, best residuals {residuals:?}")]
    CalibrationFailed {
        iterations: usize,
        residuals: [f64; 3],
    },

    #[error("monte carlo failure: {0}")]
    MonteCarlo(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable snake_case tag for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::CorrelationRange { .. } => "correlation_range",
            Error::Inconsistent(_) => "inconsistent",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Domain(_) => "domain",
            Error::Unsupported(_) => "unsupported",
            Error::NoSolution(_) => "no_solution",
            Error::Accuracy(_) => "accuracy",
            Error::CalibrationFailed { .. } => "calibration_failed",
            Error::MonteCarlo(_) => "monte_carlo",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Io(_) => "io",
        }
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Checks `value` is finite and satisfies `ok`.
pub(crate) fn check(name: &'static str, value: f64, ok: bool, reason: &str) -> Result<()> {
    if !value.is_finite() || !ok {
        return Err(invalid(name, format!("{reason} (got {value})")));
    }
    Ok(())
}
