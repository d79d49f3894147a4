use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad user input: out-of-range parameter, malformed config, unknown preset.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("spectral_env: kernel quadrature did not converge at lag index {lag} (change {change:.3e} > tolerance {tolerance:.3e})")]
    Quadrature {
        lag: usize,
        change: f64,
        tolerance: f64,
    },

    #[error("greens_solver: step-halving check failed for {series} (max change {change:.3e} > tolerance {tolerance:.3e})")]
    StepHalving {
        series: &'static str,
        change: f64,
        tolerance: f64,
    },

    #[error("greens_solver: thermal correlation v(t,t) = {value:.3e} < 0 at step {index}")]
    NegativeOccupation { index: usize, value: f64 },

    #[error("{module}: consistency check failed at step {index}: {detail}")]
    Consistency {
        module: &'static str,
        index: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for input/validation errors (as opposed to numerical failures).
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidParameter { .. } | Error::Json(_))
    }
}
