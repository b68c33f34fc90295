use thiserror::Error;

use crate::algorithms::Trajectory;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The iterate left the finite region or exceeded the divergence bound.
    /// Carries the trajectory recorded up to (and including) the offending step.
    #[error("iterate diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trajectory: Box<Trajectory>,
    },

    #[error("quadrature did not converge: estimated error {estimated_error:e} exceeds {tolerance:e}")]
    Quadrature {
        estimated_error: f64,
        tolerance: f64,
    },

    #[error("grid too coarse: estimated discretization error {estimated_error:e}")]
    GridTooCoarse { estimated_error: f64 },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("insufficient samples: need at least {required}, have {available}")]
    InsufficientSamples { required: usize, available: usize },
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
