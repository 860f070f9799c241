use nalgebra::{DMatrix, DVector};

use super::{ViInstance, ViMethod, ViOperator, ViResult};
use crate::error::{check_dim, Error, Result};
use crate::sets::ProductSet;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// Primal active-set method for the affine VI `A y + b` over a box-like
/// product set, i.e. the convex QP `min ½ yᵀAy + bᵀy` with bounds.
///
/// `A` must be symmetric positive definite. The method is finite in exact
/// arithmetic; after `2^min(n, 20)` pivots it gives up with
/// [`Error::ActiveSetCycle`] so the caller can switch to a projection method.
pub fn solve_affine_box_activeset(a: &DMatrix<f64>, b: &DVector<f64>, set: &ProductSet) -> Result<ViResult> {
    let n = set.dim();
    check_dim(n, b.len())?;
    check_dim(n, a.nrows())?;
    check_dim(n, a.ncols())?;
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for s in set.blocks() {
        let (l, u) = s
            .bounds()
            .ok_or_else(|| Error::InvalidInput("active-set solver needs box or orthant blocks".into()))?;
        lower.extend(l);
        upper.extend(u);
    }

    let mut y = DVector::from_fn(n, |j, _| 0.0f64.clamp(lower[j], upper[j]));
    let mut state: Vec<Bound> = (0..n)
        .map(|j| {
            if y[j] == lower[j] {
                Bound::Lower
            } else if y[j] == upper[j] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect();
    let limit = 1usize << n.min(20);
    let mut pivots = 0usize;
    let mut iterations = 0usize;
    let mut on_face_minimum = false;

    loop {
        iterations += 1;
        let grad = a * &y + b;
        if !on_face_minimum {
            let free: Vec<usize> = (0..n).filter(|&j| state[j] == Bound::Free).collect();
            let step = face_step(a, &grad, &free)?;
            let mut alpha = 1.0;
            let mut blocking = None;
            for (k, &j) in free.iter().enumerate() {
                let p = step[k];
                if p < 0.0 && lower[j].is_finite() {
                    let t = (lower[j] - y[j]) / p;
                    if t < alpha {
                        alpha = t.max(0.0);
                        blocking = Some((j, Bound::Lower));
                    }
                } else if p > 0.0 && upper[j].is_finite() {
                    let t = (upper[j] - y[j]) / p;
                    if t < alpha {
                        alpha = t.max(0.0);
                        blocking = Some((j, Bound::Upper));
                    }
                }
            }
            for (k, &j) in free.iter().enumerate() {
                y[j] += alpha * step[k];
            }
            match blocking {
                Some((j, bound)) => {
                    state[j] = bound;
                    y[j] = if bound == Bound::Lower { lower[j] } else { upper[j] };
                    pivots += 1;
                }
                None => on_face_minimum = true,
            }
        } else {
            // Release the bound with the most negative multiplier.
            let mut worst = 0.0;
            let mut release = None;
            for j in 0..n {
                let violation = match state[j] {
                    Bound::Lower => -grad[j],
                    Bound::Upper => grad[j],
                    Bound::Free => 0.0,
                };
                if violation > worst {
                    worst = violation;
                    release = Some(j);
                }
            }
            match release {
                Some(j) => {
                    state[j] = Bound::Free;
                    on_face_minimum = false;
                    pivots += 1;
                }
                None => break,
            }
        }
        if pivots > limit {
            return Err(Error::ActiveSetCycle { pivots });
        }
    }

    let inst = ViInstance::new(ViOperator::affine(a.clone(), b.clone()), set.clone())?;
    let tol = 1e-10 * (1.0 + b.amax());
    Ok(ViResult::finish(&inst, y, iterations, tol, ViMethod::ActiveSet))
}

/// Newton step on the free coordinates: `A_FF p = -grad_F`.
fn face_step(a: &DMatrix<f64>, grad: &DVector<f64>, free: &[usize]) -> Result<DVector<f64>> {
    if free.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let k = free.len();
    let sub = DMatrix::from_fn(k, k, |r, c| a[(free[r], free[c])]);
    let rhs = DVector::from_fn(k, |r, _| -grad[free[r]]);
    let chol = sub
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("active-set solver needs a positive definite matrix".into()))?;
    Ok(chol.solve(&rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::ConvexSet;

    fn orthant(n: usize) -> ProductSet {
        ProductSet::single(ConvexSet::NonnegOrthant { dim: n }).unwrap()
    }

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn scalar_interior_and_boundary() {
        let r = solve_affine_box_activeset(&DMatrix::identity(1, 1), &dv(&[-2.0]), &orthant(1)).unwrap();
        assert!((r.y[0] - 2.0).abs() < 1e-15);
        let r = solve_affine_box_activeset(&DMatrix::identity(1, 1), &dv(&[3.0]), &orthant(1)).unwrap();
        assert_eq!(r.y[0], 0.0);
        assert_eq!(r.z[0], 3.0);
    }

    // Enumerates the 2^n complementary bases of the LCP y ⊥ Ay + b.
    fn lcp_enum(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let n = b.len();
        for mask in 0u32..(1 << n) {
            let free: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let mut y = DVector::zeros(n);
            if !free.is_empty() {
                let sub = DMatrix::from_fn(free.len(), free.len(), |r, c| a[(free[r], free[c])]);
                let rhs = DVector::from_fn(free.len(), |r, _| -b[free[r]]);
                let sol = sub.lu().solve(&rhs).unwrap();
                for (k, &j) in free.iter().enumerate() {
                    y[j] = sol[k];
                }
            }
            let z = a * &y + b;
            if y.iter().all(|v| *v >= -1e-12) && z.iter().all(|v| *v >= -1e-12) {
                return y;
            }
        }
        panic!("no complementary basis");
    }

    #[test]
    fn two_dimensional_lcp_matches_enumeration() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let b = dv(&[-1.0, 4.0]);
        let expected = lcp_enum(&a, &b);
        assert!((&expected - dv(&[0.5, 0.0])).amax() < 1e-15);
        let r = solve_affine_box_activeset(&a, &b, &orthant(2)).unwrap();
        assert!(r.converged);
        assert!((r.y - expected).amax() < 1e-14);
        assert!((r.z - dv(&[0.0, 4.5])).amax() < 1e-14);
    }

    #[test]
    fn two_sided_box() {
        let set = ProductSet::single(ConvexSet::Box { lower: vec![0.0, -1.0], upper: vec![1.0, 1.0] }).unwrap();
        let r = solve_affine_box_activeset(&DMatrix::identity(2, 2), &dv(&[-5.0, 0.5]), &set).unwrap();
        assert!((r.y - dv(&[1.0, -0.5])).amax() < 1e-15);
    }

    #[test]
    fn rejects_non_box_sets() {
        let set = ProductSet::single(ConvexSet::Simplex { dim: 2 }).unwrap();
        assert!(solve_affine_box_activeset(&DMatrix::identity(2, 2), &dv(&[0.0, 0.0]), &set).is_err());
    }
}
