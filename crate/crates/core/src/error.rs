use thiserror::Error;

/// Errors produced by the models and solvers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{param} = {value} outside valid range [{min}, {max}]")]
    OutOfRange {
        param: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid parameter `{param}`: {reason}")]
    InvalidParameter { param: &'static str, reason: String },

    #[error("solver did not converge after {iterations} iterations (residuals {residuals:?})")]
    Solver {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("calibration residual RMS {rms:.3e} rad/um above tolerance (per-constraint residuals {residuals:?})")]
    Calibration { rms: f64, residuals: Vec<f64> },

    #[error("spectral grid too coarse: {points} samples above half maximum, need at least {required}")]
    Resolution { points: usize, required: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("filter extinguishes the spectrum (post-filter norm is zero)")]
    FilteredToExtinction,

    #[error("fit failed: {reason} (residuals {residuals:?})")]
    Fit {
        reason: String,
        residuals: Vec<f64>,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_range(param: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            param,
            value,
            min,
            max,
        })
    }
}

pub(crate) fn ensure_positive(param: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            param,
            reason: format!("must be positive and finite, got {value}"),
        })
    }
}

pub(crate) fn ensure_non_negative(param: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            param,
            reason: format!("must be non-negative and finite, got {value}"),
        })
    }
}
