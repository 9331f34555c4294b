use thiserror::Error;

/// Failure modes shared by every simulation layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("Hilbert-space dimension {dim} exceeds the bound {bound}")]
    DimensionBound { dim: u128, bound: usize },

    #[error("mode index {index} out of range for a {modes}-mode layout")]
    InvalidMode { index: usize, modes: usize },

    #[error("state support leaves the truncated space: {0}")]
    Truncation(String),

    #[error("impossible-outcome conditioning (probability {probability:e})")]
    ImpossibleOutcome { probability: f64 },

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("chain stalls at level {level}: success probability {probability:e}")]
    ChainStall { level: usize, probability: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        field,
        reason: reason.into(),
    }
}

/// Rejects NaN and values outside `[lo, hi]`.
pub(crate) fn check_range(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_nan() || value < lo || value > hi {
        return Err(invalid(field, format!("{value} not in [{lo}, {hi}]")));
    }
    Ok(())
}
