use thiserror::Error;

/// Errors raised anywhere in the calibration toolkit.
#[derive(Debug, Error)]
pub enum CalibError {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An estimator's denominator vanishes for this photon number.
    #[error("uninformative bin i={index}: {reason}")]
    UninformativeBin { index: usize, reason: String },

    /// The mixture fit did not converge within the iteration cap.
    #[error("fit failed after {iterations} iterations (last cost {last_residual:e})")]
    FitFailure {
        iterations: usize,
        last_residual: f64,
    },

    /// Automatic peak seeding could not find enough maxima.
    #[error("initialization error: found {found} local maxima, need {needed}")]
    Initialization { found: usize, needed: usize },

    /// Analytic and finite-difference gradients disagree.
    #[error("numerical instability in d/d{quantity}: analytic {analytic:e} vs finite-difference {numeric:e}")]
    NumericalInstability {
        quantity: String,
        analytic: f64,
        numeric: f64,
    },

    /// An experiment or pipeline configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CalibError>;

pub(crate) fn domain(msg: impl Into<String>) -> CalibError {
    CalibError::Domain(msg.into())
}
