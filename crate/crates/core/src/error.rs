use thiserror::Error;

/// Errors surfaced by system construction, solvers and reduction builders.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("points lie in different fibers: base residual {residual:e} exceeds tolerance {tolerance:e}")]
    FiberMismatch { residual: f64, tolerance: f64 },

    #[error("kinematic constraint violated: |chi| = {residual:e} exceeds tolerance {tolerance:e}")]
    ConstraintViolated { residual: f64, tolerance: f64 },

    #[error("Newton did not converge after {iterations} iterations (residual {residual:e}){}", step_suffix(.step))]
    NonConvergence {
        iterations: usize,
        residual: f64,
        step: Option<usize>,
    },

    #[error("singular Newton system: condition estimate {condition:e}{}", step_suffix(.step))]
    SingularJacobian { condition: f64, step: Option<usize> },

    #[error("{what} is rank deficient: rank {rank}, expected {expected}")]
    RankDeficient {
        what: &'static str,
        rank: usize,
        expected: usize,
    },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("reconstruction hypothesis violated: {what} (residual {residual:e})")]
    Reconstruction { what: String, residual: f64 },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
}

fn step_suffix(step: &Option<usize>) -> String {
    match step {
        Some(k) => format!(" at step {k}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach the trajectory step index at which a solver error occurred.
    pub(crate) fn at_step(self, k: usize) -> Self {
        match self {
            Error::NonConvergence {
                iterations,
                residual,
                ..
            } => Error::NonConvergence {
                iterations,
                residual,
                step: Some(k),
            },
            Error::SingularJacobian { condition, .. } => Error::SingularJacobian {
                condition,
                step: Some(k),
            },
            other => other,
        }
    }
}
