use thiserror::Error;

/// Errors raised by the set-valued map toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovaraError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("map value is empty at the requested point")]
    EmptyValue,
    #[error("point is not in the set (violation {violation:e})")]
    PointNotInSet { violation: f64 },
    #[error("jacobian unavailable: {0}")]
    JacobianUnavailable(&'static str),
    #[error("unsupported map class for {operation}: {class}")]
    UnsupportedMapClass { operation: &'static str, class: String },
    #[error("reference pair is not on the graph (distance {distance:e})")]
    NotOnGraph { distance: f64 },
    #[error("degenerate sampling: {0}")]
    DegenerateSampling(&'static str),
    #[error("inverse mapping unavailable for {0}")]
    InverseUnavailable(String),
    #[error("covering step failed: {reason}")]
    StepFailed { reason: String },
    #[error("covering assumption violated: lipschitz modulus {ell} is not below covering modulus {alpha}")]
    NotContractive { alpha: f64, ell: f64 },
    #[error("launch condition violated: initial residual {residual:e} is not below (alpha - ell) * r = {limit:e}")]
    LaunchConditionViolated { residual: f64, limit: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterExceeded { iterations: usize, residual: f64 },
    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("linear algebra failure: {0}")]
    LinearAlgebra(&'static str),
}

pub type Result<T> = std::result::Result<T, CovaraError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(CovaraError::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
