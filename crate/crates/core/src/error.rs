use nalgebra::DVector;
use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix is singular to working precision (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    /// The active-set method hit its pivot budget; callers should retry
    /// with a projection method.
    #[error("active-set pivot limit reached after {pivots} pivots")]
    ActiveSetCycle { pivots: usize },

    #[error("master problem infeasible: {0}")]
    InfeasibleMaster(String),

    #[error("inner solver did not converge (best residual {residual:.3e})")]
    InnerNonconvergence { residual: f64, best: DVector<f64> },

    #[error("multiplier norm {norm:.3e} exceeds cap {cap:.3e}")]
    MultiplierBlowup { norm: f64, cap: f64 },

    #[error("problem file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
