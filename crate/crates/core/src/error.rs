use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
///
/// The variants are grouped so that a front end can map them onto distinct
/// exit statuses: bad input data, violated preconditions on tuning
/// parameters, and numerical breakdowns.
#[derive(Debug, Error)]
pub enum HyError {
    /// Tick data failed validation (ordering, range, NaN, ...).
    #[error("invalid data for asset {asset}{}: {reason}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    Validation {
        asset: String,
        index: Option<usize>,
        reason: String,
    },

    /// An argument lies outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A tuning-parameter precondition does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Quadrature or linear algebra failed to produce a usable answer.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HyError {
    pub(crate) fn validation(asset: impl Into<String>, index: Option<usize>, reason: impl Into<String>) -> Self {
        HyError::Validation {
            asset: asset.into(),
            index,
            reason: reason.into(),
        }
    }

    /// True when the error stems from malformed input data rather than from
    /// numerics or configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(self, HyError::Validation { .. } | HyError::Csv(_))
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, HyError::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, HyError>;
