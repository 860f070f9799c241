use nalgebra::DVector;

use super::{ViInstance, ViMethod, ViResult};
use crate::error::{check_dim, Error, Result};
use crate::linalg::all_finite;

/// Korpelevich extragradient with a backtracked step.
///
/// The step starts at 1 and is halved until
/// `η |Φ(y) - Φ(ŷ)| <= 0.9 |y - ŷ|` holds for the predictor `ŷ`. Running out
/// of iterations is reported through `converged = false`.
pub fn solve_extragradient(
    inst: &ViInstance<'_>,
    y0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ViResult> {
    check_dim(inst.dim(), y0.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let project = |v: &mut DVector<f64>| inst.set.project_in_place(v.as_mut_slice());
    let mut y = y0.clone();
    project(&mut y);
    let mut step = 1.0f64;
    let mut iterations = 0;

    while iterations < max_iter {
        let fy = inst.op.eval(&y);
        if !all_finite(&fy) {
            return Err(Error::NonFinite("extragradient operator"));
        }
        if inst.natural_residual_with(&y, &fy) <= tol {
            break;
        }
        iterations += 1;
        let fpred = loop {
            let mut pred = &y - &fy * step;
            project(&mut pred);
            let fpred = inst.op.eval(&pred);
            if !all_finite(&fpred) {
                return Err(Error::NonFinite("extragradient operator"));
            }
            let lhs = step * (&fy - &fpred).norm();
            let rhs = 0.9 * (&y - &pred).norm();
            if lhs <= rhs || step < 1e-14 {
                break fpred;
            }
            step *= 0.5;
        };
        let mut next = &y - &fpred * step;
        project(&mut next);
        y = next;
    }
    Ok(ViResult::finish(inst, y, iterations, tol, ViMethod::Extragradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::{ConvexSet, ProductSet};
    use crate::vi::ViOperator;
    use nalgebra::DMatrix;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn unconstrained_affine_zero() {
        let set = ProductSet::single(ConvexSet::AllSpace { dim: 2 }).unwrap();
        let inst = ViInstance::new(ViOperator::affine(DMatrix::identity(2, 2), dv(&[-3.0, -1.0])), set).unwrap();
        let r = solve_extragradient(&inst, &dv(&[0.0, 0.0]), 1e-10, 10_000).unwrap();
        assert!(r.converged);
        assert!((r.y - dv(&[3.0, 1.0])).amax() < 1e-9);
    }

    #[test]
    fn simplex_solution_is_projection() {
        let set = ProductSet::single(ConvexSet::Simplex { dim: 2 }).unwrap();
        let inst = ViInstance::new(ViOperator::affine(DMatrix::identity(2, 2), dv(&[-2.0, 0.0])), set).unwrap();
        let r = solve_extragradient(&inst, &dv(&[0.5, 0.5]), 1e-10, 10_000).unwrap();
        assert!(r.converged);
        assert!((r.y - dv(&[1.0, 0.0])).amax() < 1e-9);
    }

    #[test]
    fn orthant_complementarity() {
        let set = ProductSet::single(ConvexSet::NonnegOrthant { dim: 2 }).unwrap();
        let op = ViOperator::general(2, |y: &DVector<f64>| dv(&[y[0] - 1.0, y[1] + 1.0]));
        let inst = ViInstance::new(op, set).unwrap();
        let r = solve_extragradient(&inst, &dv(&[5.0, 5.0]), 1e-10, 10_000).unwrap();
        assert!(r.converged);
        assert!((r.y.clone() - dv(&[1.0, 0.0])).amax() < 1e-9);
        assert!((r.z - dv(&[0.0, 1.0])).amax() < 1e-9);
        assert!((r.natural_residual - inst.natural_residual(&r.y)).abs() <= 1e-12);
    }

    #[test]
    fn exhaustion_is_not_an_error() {
        let set = ProductSet::single(ConvexSet::AllSpace { dim: 1 }).unwrap();
        let inst = ViInstance::new(ViOperator::affine(DMatrix::identity(1, 1) * 1e-3, dv(&[-1.0])), set).unwrap();
        let r = solve_extragradient(&inst, &dv(&[0.0]), 1e-12, 3).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 3);
    }

    #[test]
    fn non_finite_operator_is_an_error() {
        let set = ProductSet::single(ConvexSet::AllSpace { dim: 1 }).unwrap();
        let op = ViOperator::general(1, |_: &DVector<f64>| dv(&[f64::NAN]));
        let inst = ViInstance::new(op, set).unwrap();
        assert!(matches!(
            solve_extragradient(&inst, &dv(&[0.0]), 1e-8, 10),
            Err(Error::NonFinite(_))
        ));
    }
}
