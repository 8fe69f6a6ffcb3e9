use thiserror::Error;

/// Errors raised by the foldlab numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Input outside the domain of a formula (coincident points, r <= 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A parameter violates a documented precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The discretization does not resolve the oscillation.
    #[error(
        "resolution rule violated on {side} axis {axis}: have {have} nodes, need at least {required}"
    )]
    Resolution {
        side: &'static str,
        axis: usize,
        have: usize,
        required: usize,
    },

    /// The grid needed by the resolution rule exceeds the configured cap.
    #[error("grid cap exceeded: {required} kernel entries required, cap is {cap}")]
    GridCap { required: u128, cap: u128 },

    #[error("norm estimate did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// Almost-orthogonality gains that do not decay.
    #[error("gains do not decay: {0}")]
    NonDecaying(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
