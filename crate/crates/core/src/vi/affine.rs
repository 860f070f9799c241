use nalgebra::{DMatrix, DVector};

use super::{ViMethod, ViResult};
use crate::error::{check_dim, Error, Result};

/// Solves `A y + b = 0`, the VI over all of space with an affine operator.
///
/// Uses LU with partial pivoting and one step of iterative refinement. The
/// condition estimate reported on failure is the spread of the pivots.
pub fn solve_affine_allspace(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<ViResult> {
    if !a.is_square() {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    check_dim(a.nrows(), b.len())?;
    let lu = a.clone().lu();
    let u = lu.u();
    let diag = u.diagonal().abs();
    let (dmax, dmin) = (diag.max(), diag.min());
    let condition = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    if !(condition < 1e14) {
        return Err(Error::Singular { condition });
    }
    let rhs = -b;
    let mut y = lu.solve(&rhs).ok_or(Error::Singular { condition })?;
    let r = a * &y + b;
    if let Some(dy) = lu.solve(&(-&r)) {
        y += dy;
    }
    let z = a * &y + b;
    let natural_residual = z.amax();
    if !natural_residual.is_finite() {
        return Err(Error::NonFinite("linear solve"));
    }
    Ok(ViResult {
        converged: natural_residual <= 1e-10 * (1.0 + b.amax()),
        y,
        z,
        natural_residual,
        iterations: 1,
        method: ViMethod::LinearSolve,
    })
}
