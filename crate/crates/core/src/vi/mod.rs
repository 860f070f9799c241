//! Solvers for monotone variational inequalities `VI(Φ, S)` over canonical
//! product sets: find `y ∈ S` with `<Φ(y), y' - y> >= 0` for all `y' ∈ S`.
//!
//! [`solve_vi`] routes on structure:
//! - affine `Φ` over all of space: dense linear solve,
//! - affine symmetric positive definite `Φ` over boxes/orthants: active set,
//! - other affine `Φ`: semismooth Newton on the complementarity
//!   reformulation, extragradient if Newton stalls,
//! - everything else: adaptive extragradient.

mod active_set;
mod affine;
mod extragradient;
pub(crate) mod kkt;
mod newton;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use active_set::solve_affine_box_activeset;
pub use affine::solve_affine_allspace;
pub use extragradient::solve_extragradient;
pub use newton::solve_affine_newton;

use crate::error::{check_dim, Error, Result};
use crate::linalg::is_symmetric;
use crate::sets::ProductSet;

type OpFn<'a> = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'a;

/// The VI operator `Φ`.
pub enum ViOperator<'a> {
    Affine { matrix: DMatrix<f64>, offset: DVector<f64> },
    General { dim: usize, eval: Box<OpFn<'a>> },
}

impl<'a> ViOperator<'a> {
    pub fn affine(matrix: DMatrix<f64>, offset: DVector<f64>) -> Self {
        ViOperator::Affine { matrix, offset }
    }

    pub fn general(dim: usize, eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'a) -> Self {
        ViOperator::General { dim, eval: Box::new(eval) }
    }

    pub fn dim(&self) -> usize {
        match self {
            ViOperator::Affine { offset, .. } => offset.len(),
            ViOperator::General { dim, .. } => *dim,
        }
    }

    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        match self {
            ViOperator::Affine { matrix, offset } => matrix * y + offset,
            ViOperator::General { eval, .. } => eval(y),
        }
    }

    pub fn affine_form(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        match self {
            ViOperator::Affine { matrix, offset } => Some((matrix, offset)),
            ViOperator::General { .. } => None,
        }
    }
}

pub struct ViInstance<'a> {
    pub op: ViOperator<'a>,
    pub set: ProductSet,
    pub strong_monotonicity_hint: Option<f64>,
}

impl<'a> ViInstance<'a> {
    pub fn new(op: ViOperator<'a>, set: ProductSet) -> Result<Self> {
        check_dim(set.dim(), op.dim())?;
        Ok(Self { op, set, strong_monotonicity_hint: None })
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    /// `|y - Π_S(y - Φ(y))|_∞` given `z = Φ(y)`.
    pub fn natural_residual_with(&self, y: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let mut t = y - z;
        self.set.project_in_place(t.as_mut_slice());
        (y - t).amax()
    }

    pub fn natural_residual(&self, y: &DVector<f64>) -> f64 {
        self.natural_residual_with(y, &self.op.eval(y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViMethod {
    LinearSolve,
    ActiveSet,
    Newton,
    Extragradient,
}

#[derive(Debug, Clone)]
pub struct ViResult {
    pub y: DVector<f64>,
    /// `Φ(y)`.
    pub z: DVector<f64>,
    pub natural_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: ViMethod,
}

impl ViResult {
    pub(crate) fn finish(inst: &ViInstance<'_>, y: DVector<f64>, iterations: usize, tol: f64, method: ViMethod) -> Self {
        let z = inst.op.eval(&y);
        let natural_residual = inst.natural_residual_with(&y, &z);
        Self { converged: natural_residual <= tol, y, z, natural_residual, iterations, method }
    }
}

/// Routes a VI to the most specific solver that applies. Returns the best
/// available result; `converged` reports whether `tol` was met.
pub fn solve_vi(inst: &ViInstance<'_>, y0: &DVector<f64>, tol: f64, max_iter: usize) -> Result<ViResult> {
    check_dim(inst.dim(), y0.len())?;
    if let Some((a, b)) = inst.op.affine_form() {
        if inst.set.is_all_space() {
            if let Ok(r) = solve_affine_allspace(a, b) {
                return Ok(r);
            }
        } else if inst.set.is_box_like() && is_symmetric(a, 1e-12) && a.clone().cholesky().is_some() {
            match solve_affine_box_activeset(a, b, &inst.set) {
                Ok(r) if r.converged || r.natural_residual <= tol => return Ok(r),
                Ok(_) | Err(Error::ActiveSetCycle { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        let r = solve_affine_newton(inst, y0, tol, max_iter.min(500))?;
        if r.natural_residual <= tol {
            return Ok(r);
        }
        let start = if r.y.iter().all(|v| v.is_finite()) { r.y.clone() } else { y0.clone() };
        let eg = solve_extragradient(inst, &start, tol, max_iter)?;
        return Ok(if eg.natural_residual < r.natural_residual { eg } else { r });
    }
    solve_extragradient(inst, y0, tol, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::ConvexSet;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn random_pd(n: usize, rng: &mut ChaCha8Rng, symmetric: bool) -> DMatrix<f64> {
        let s = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut m = s.transpose() * &s + DMatrix::identity(n, n) * 0.5;
        if !symmetric {
            let k = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            m += &k - k.transpose();
        }
        m
    }

    fn vi_inequality_holds(inst: &ViInstance<'_>, r: &ViResult, tol: f64, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..100).all(|_| {
            let raw = DVector::from_fn(inst.dim(), |_, _| rng.gen_range(-3.0..3.0));
            let y = inst.set.project(&raw).unwrap();
            r.z.dot(&(y - &r.y)) >= -tol * (1.0 + r.z.norm())
        })
    }

    #[test]
    fn routing_picks_the_structured_solver() {
        let all = ProductSet::single(ConvexSet::AllSpace { dim: 2 }).unwrap();
        let inst = ViInstance::new(ViOperator::affine(DMatrix::identity(2, 2), dv(&[-1.0, -2.0])), all).unwrap();
        assert_eq!(solve_vi(&inst, &dv(&[0.0, 0.0]), 1e-10, 100).unwrap().method, ViMethod::LinearSolve);

        let orth = ProductSet::single(ConvexSet::NonnegOrthant { dim: 2 }).unwrap();
        let inst = ViInstance::new(ViOperator::affine(DMatrix::identity(2, 2), dv(&[-1.0, 2.0])), orth).unwrap();
        assert_eq!(solve_vi(&inst, &dv(&[0.0, 0.0]), 1e-10, 100).unwrap().method, ViMethod::ActiveSet);

        let skew = DMatrix::from_row_slice(2, 2, &[0.1, -1.0, 1.0, 0.1]);
        let sets = ProductSet::new(vec![
            ConvexSet::BallNonneg { dim: 1, radius_sq: 4.0 },
            ConvexSet::Simplex { dim: 1 },
        ])
        .unwrap();
        let inst = ViInstance::new(ViOperator::affine(skew, dv(&[0.0, 1.0])), sets).unwrap();
        let r = solve_vi(&inst, &dv(&[0.0, 1.0]), 1e-10, 10_000).unwrap();
        assert_eq!(r.method, ViMethod::Newton);
        assert!(r.converged);
        // firm-like coordinate saturates the ball: y0 = 2, price forced to 1
        assert!((r.y[0] - 2.0).abs() < 1e-9 && (r.y[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn newton_route_matches_extragradient_on_simplex_ball_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = 4;
        let mut m = DMatrix::zeros(2 * g, 2 * g);
        for j in 0..g {
            m[(j, g + j)] = -1.0;
            m[(g + j, j)] = 1.0;
        }
        m += DMatrix::identity(2 * g, 2 * g) * 0.05;
        let offset = DVector::from_fn(2 * g, |i, _| if i >= g { rng.gen_range(-2.0..2.0) } else { 0.0 });
        let sets = ProductSet::new(vec![
            ConvexSet::BallNonneg { dim: g, radius_sq: 9.0 },
            ConvexSet::Simplex { dim: g },
        ])
        .unwrap();
        let inst = ViInstance::new(ViOperator::affine(m, offset), sets).unwrap();
        let y0 = inst.set.project(&DVector::zeros(2 * g)).unwrap();
        let nt = solve_affine_newton(&inst, &y0, 1e-11, 200).unwrap();
        let eg = solve_extragradient(&inst, &y0, 1e-11, 200_000).unwrap();
        assert!(nt.converged && eg.converged, "{nt:?} {eg:?}");
        assert!((nt.y - eg.y).amax() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn extragradient_agrees_with_active_set_on_orthant(n in 1usize..9, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(n, &mut rng, true);
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let set = ProductSet::single(ConvexSet::NonnegOrthant { dim: n }).unwrap();
            let inst = ViInstance::new(ViOperator::affine(a.clone(), b.clone()), set.clone()).unwrap();
            let act = solve_affine_box_activeset(&a, &b, &set).unwrap();
            let eg = solve_extragradient(&inst, &DVector::zeros(n), 1e-11, 500_000).unwrap();
            prop_assert!(act.converged && eg.converged);
            prop_assert!((&act.y - &eg.y).amax() <= 1e-6);
            prop_assert!(vi_inequality_holds(&inst, &act, 1e-10, seed));
            prop_assert!(vi_inequality_holds(&inst, &eg, 1e-8, seed + 1));
        }

        #[test]
        fn scaling_the_operator_keeps_the_solution(n in 1usize..7, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(n, &mut rng, false);
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let mut blocks = vec![ConvexSet::Simplex { dim: n }];
            if n > 1 {
                blocks = vec![ConvexSet::NonnegOrthant { dim: 1 }, ConvexSet::Simplex { dim: n - 1 }];
            }
            let set = ProductSet::new(blocks).unwrap();
            let one = ViInstance::new(ViOperator::affine(a.clone(), b.clone()), set.clone()).unwrap();
            let two = ViInstance::new(ViOperator::affine(&a * 2.0, &b * 2.0), set.clone()).unwrap();
            let y0 = set.project(&DVector::zeros(n)).unwrap();
            let r1 = solve_vi(&one, &y0, 1e-10, 100_000).unwrap();
            let r2 = solve_vi(&two, &y0, 1e-10, 100_000).unwrap();
            prop_assert!(r1.converged && r2.converged);
            prop_assert!((&r1.y - &r2.y).amax() <= 1e-7);
            prop_assert!(vi_inequality_holds(&one, &r1, 1e-9, seed));
        }
    }
}
