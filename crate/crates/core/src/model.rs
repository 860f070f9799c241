//! QVI instances: operator, coupled constraints, easy set and block partition.
//!
//! The problem is: find `x` in `K(x) = K_g(x) ∩ K_h` with
//! `<F(x), y - x> >= 0` for all `y` in `K(x)`, where
//! `K_g(x) = {y : g(y, x) <= 0}` carries the constraints coupling `y` and `x`
//! and `K_h` is a product of canonical sets.

use std::collections::BTreeMap;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{dvec, CoupledFile, OperatorFile};
use crate::linalg::fd_jacobian;
use crate::sets::ProductSet;

/// Single-valued operator `F : R^n -> R^n`.
///
/// Implementations must be pure and callable from several threads at once;
/// the Jacobi engine evaluates blocks in parallel.
pub trait Operator: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;

    /// Jacobian `∇F(x)`, if available.
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.affine_form().map(|(a, _)| a.clone())
    }

    /// `(A, b)` with `F(x) = A x + b`, for affine operators.
    fn affine_form(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        None
    }

    /// Known lower bound on the strong-monotonicity modulus.
    fn monotonicity_hint(&self) -> Option<f64> {
        None
    }

    /// File representation, for operators that can be written to disk.
    fn describe(&self) -> Option<OperatorFile> {
        None
    }
}

/// `F(x) = A x + b`.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    matrix: DMatrix<f64>,
    offset: DVector<f64>,
}

impl AffineOperator {
    pub fn new(matrix: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidInput("affine operator matrix must be square".into()));
        }
        check_dim(matrix.nrows(), offset.len())?;
        Ok(Self { matrix, offset })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }
}

impl Operator for AffineOperator {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }

    fn affine_form(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        Some((&self.matrix, &self.offset))
    }

    fn describe(&self) -> Option<OperatorFile> {
        Some(OperatorFile::affine(&self.matrix, &self.offset))
    }
}

type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Operator backed by user closures. Not serializable.
pub struct FnOperator {
    dim: usize,
    eval: Box<VecFn>,
    jacobian: Option<Box<MatFn>>,
    modulus: Option<f64>,
}

impl FnOperator {
    pub fn new(dim: usize, eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self { dim, eval: Box::new(eval), jacobian: None, modulus: None }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jac));
        self
    }

    pub fn with_monotonicity_hint(mut self, c: f64) -> Self {
        self.modulus = Some(c);
        self
    }
}

impl Operator for FnOperator {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(x)
    }
    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(x))
    }
    fn monotonicity_hint(&self) -> Option<f64> {
        self.modulus
    }
}

/// How `g(·, x)` depends on its first argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    /// Affine in `y`: `∇_y g` does not depend on `y`.
    Linear,
    /// Quadratic in `y`: `∇²_yy g` does not depend on `y`.
    Quadratic,
    General,
}

/// The coupled constraint family `g(y, x) <= 0`, `g : R^n x R^n -> R^m`.
///
/// Each `g_i(·, x)` must be convex and differentiable for fixed `x`.
pub trait CoupledConstraints: Send + Sync {
    fn dim(&self) -> usize;

    /// Number of constraints `m`.
    fn count(&self) -> usize;

    fn eval(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64>;

    /// `∇_y g(y, x)` as an `n x m` matrix whose columns are `∇_y g_i`.
    fn grad_y(&self, y: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64>;

    /// `∇_y g(y, x) w`.
    fn grad_y_times(&self, y: &DVector<f64>, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.grad_y(y, x) * w
    }

    fn curvature(&self) -> Curvature {
        Curvature::General
    }

    /// `Σ_i w_i ∇²_yy g_i(y, x)`, if available.
    fn hessian_y_weighted(
        &self,
        _y: &DVector<f64>,
        _x: &DVector<f64>,
        _w: &DVector<f64>,
    ) -> Option<DMatrix<f64>> {
        if self.curvature() == Curvature::Linear {
            Some(DMatrix::zeros(self.dim(), self.dim()))
        } else {
            None
        }
    }

    /// Jacobians along the diagonal `y = x = z`: of `z ↦ g(z, z)` (`m x n`)
    /// and of `z ↦ ∇_y g(z, z) w` (`n x n`), if available. Callers fall back
    /// to finite differences otherwise.
    fn diagonal_jacobians(&self, _z: &DVector<f64>, _w: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    fn convex_in_y(&self) -> bool {
        true
    }

    fn describe(&self) -> Option<CoupledFile> {
        None
    }
}

/// `m = 0`: the QVI degenerates to a VI over `K_h`.
#[derive(Debug, Clone)]
pub struct NoCoupling {
    pub dim: usize,
}

impl CoupledConstraints for NoCoupling {
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        0
    }
    fn eval(&self, _y: &DVector<f64>, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn grad_y(&self, _y: &DVector<f64>, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, 0)
    }
    fn curvature(&self) -> Curvature {
        Curvature::Linear
    }
    fn describe(&self) -> Option<CoupledFile> {
        Some(CoupledFile::None {})
    }
}

type PairVecFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type PairMatFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Coupled constraints backed by user closures.
pub struct FnConstraints {
    dim: usize,
    count: usize,
    eval: Box<PairVecFn>,
    grad_y: Box<PairMatFn>,
    curvature: Curvature,
}

impl FnConstraints {
    pub fn new(
        dim: usize,
        count: usize,
        eval: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        grad_y: impl Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            count,
            eval: Box::new(eval),
            grad_y: Box::new(grad_y),
            curvature: Curvature::General,
        }
    }

    pub fn with_curvature(mut self, c: Curvature) -> Self {
        self.curvature = c;
        self
    }
}

impl CoupledConstraints for FnConstraints {
    fn dim(&self) -> usize {
        self.dim
    }
    fn count(&self) -> usize {
        self.count
    }
    fn eval(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        (self.eval)(y, x)
    }
    fn grad_y(&self, y: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        (self.grad_y)(y, x)
    }
    fn curvature(&self) -> Curvature {
        self.curvature
    }
}

/// A QVI instance. Immutable once built; cheap to clone.
#[derive(Clone)]
pub struct QviProblem {
    pub name: String,
    pub operator: Arc<dyn Operator>,
    pub coupled: Arc<dyn CoupledConstraints>,
    /// `K_h`.
    pub easy_set: ProductSet,
    /// Jacobi partition; each range is a union of consecutive easy-set blocks.
    pub blocks: Vec<Range<usize>>,
    pub metadata: BTreeMap<String, String>,
    pub initial_point: Option<DVector<f64>>,
}

impl std::fmt::Debug for QviProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QviProblem")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("blocks", &self.blocks)
            .finish_non_exhaustive()
    }
}

impl QviProblem {
    /// Builds and validates a problem. `block_sizes = None` uses the easy-set
    /// blocks as the Jacobi partition.
    pub fn new(
        name: impl Into<String>,
        operator: Arc<dyn Operator>,
        coupled: Arc<dyn CoupledConstraints>,
        easy_set: ProductSet,
        block_sizes: Option<&[usize]>,
    ) -> Result<Self> {
        let n = easy_set.dim();
        check_dim(n, operator.dim())?;
        check_dim(n, coupled.dim())?;
        let blocks = match block_sizes {
            None => easy_set.ranges().map(|(r, _)| r).collect(),
            Some(sizes) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(sizes.len());
                for &s in sizes {
                    if s == 0 {
                        return Err(Error::InvalidInput("empty Jacobi block".into()));
                    }
                    out.push(start..start + s);
                    start += s;
                }
                check_dim(n, start)?;
                out
            }
        };
        for r in &blocks {
            easy_set.restrict(r.clone())?;
        }
        Ok(Self {
            name: name.into(),
            operator,
            coupled,
            easy_set,
            blocks,
            metadata: BTreeMap::new(),
            initial_point: None,
        })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.metadata.insert(key.into(), value.to_string());
        self
    }

    pub fn with_initial_point(mut self, y: DVector<f64>) -> Result<Self> {
        check_dim(self.n(), y.len())?;
        self.initial_point = Some(y);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.easy_set.dim()
    }

    pub fn m(&self) -> usize {
        self.coupled.count()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(|r| r.len()).collect()
    }

    /// `F(x) + ∇_y g(x, x) mu`.
    pub fn stationarity(&self, x: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let mut s = self.operator.eval(x);
        if self.m() > 0 {
            s += self.coupled.grad_y_times(x, x, mu);
        }
        s
    }

    /// `x ∈ K_g(x) ∩ K_h` within `tol`.
    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim(self.n(), x.len())?;
        let g = self.coupled.eval(x, x);
        Ok(self.easy_set.contains(x, tol)? && g.iter().all(|&v| v <= tol))
    }
}

/// A candidate QVI solution together with its certified residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QviSolution {
    #[serde(with = "dvec")]
    pub x: DVector<f64>,
    #[serde(with = "dvec")]
    pub multipliers: DVector<f64>,
    #[serde(with = "dvec")]
    pub operator_value: DVector<f64>,
    pub kkt_residual: f64,
}

impl QviSolution {
    /// Evaluates `F(x)` and the KKT residual of `(x, mu)`.
    pub fn certify(problem: &QviProblem, x: DVector<f64>, mu: DVector<f64>) -> Result<Self> {
        let kkt_residual = qvi_kkt_residual(problem, &x, &mu)?;
        let operator_value = problem.operator.eval(&x);
        Ok(Self { x, multipliers: mu, operator_value, kkt_residual })
    }
}

/// Natural-map KKT residual of `(x, mu)` with `K_h` as the easy set.
///
/// The maximum of the stationarity residual
/// `|x - Π_{K_h}(x - F(x) - ∇_y g(x,x) mu)|_∞`, primal infeasibility
/// `max(0, g_i(x,x))`, dual infeasibility `max(0, -mu_i)` and
/// complementarity `|mu_i g_i(x,x)|`.
pub fn qvi_kkt_residual(problem: &QviProblem, x: &DVector<f64>, mu: &DVector<f64>) -> Result<f64> {
    check_dim(problem.n(), x.len())?;
    check_dim(problem.m(), mu.len())?;
    let s = problem.stationarity(x, mu);
    let mut trial = x - s;
    problem.easy_set.project_in_place(trial.as_mut_slice());
    let mut res = (x - trial).amax();
    let g = problem.coupled.eval(x, x);
    for (gi, mi) in g.iter().zip(mu.iter()) {
        res = res.max(gi.max(0.0)).max((-mi).max(0.0)).max((mi * gi).abs());
    }
    if res.is_nan() {
        return Err(Error::NonFinite("kkt residual"));
    }
    Ok(res)
}

/// Outcome of one spot check in [`validate`].
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Spot-checks the user-supplied pieces of a problem on `samples` random
/// points: affine form, Jacobian, constraint gradients, and midpoint
/// convexity of each `g_i(·, x)`. Failures are reported, not raised.
pub fn validate(problem: &QviProblem, samples: usize, seed: u64) -> ValidationReport {
    let n = problem.n();
    let m = problem.m();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let point = |rng: &mut ChaCha8Rng| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let op = problem.operator.as_ref();
    let con = problem.coupled.as_ref();

    let mut affine_worst = 0.0f64;
    let mut jac_worst = 0.0f64;
    let mut grad_worst = 0.0f64;
    let mut convex_worst = 0.0f64;
    for _ in 0..samples.max(1) {
        let x = point(&mut rng);
        let fx = op.eval(&x);
        if let Some((a, b)) = op.affine_form() {
            let direct = a * &x + b;
            affine_worst = affine_worst.max((&fx - direct).amax() / (1.0 + fx.amax()));
        }
        if let Some(jac) = op.jacobian(&x) {
            let fd = fd_jacobian(|z| op.eval(z), &x, n);
            jac_worst = jac_worst.max((jac - &fd).amax() / (1.0 + fd.amax()));
        }
        if m > 0 {
            let y = point(&mut rng);
            let grad = con.grad_y(&y, &x);
            let fd = fd_jacobian(|z| con.eval(z, &x), &y, m).transpose();
            grad_worst = grad_worst.max((grad - &fd).amax() / (1.0 + fd.amax()));

            let y2 = point(&mut rng);
            let mid = (&y + &y2) * 0.5;
            let gm = con.eval(&mid, &x);
            let g1 = con.eval(&y, &x);
            let g2 = con.eval(&y2, &x);
            for i in 0..m {
                let chord = 0.5 * (g1[i] + g2[i]);
                let excess = (gm[i] - chord) / (1.0 + chord.abs());
                convex_worst = convex_worst.max(excess);
            }
        }
    }

    let mk = |name: &str, worst: f64, threshold: f64| CheckOutcome {
        name: name.to_string(),
        passed: worst <= threshold,
        worst,
        threshold,
    };
    let dims_ok = op.dim() == n && con.dim() == n;
    ValidationReport {
        checks: vec![
            mk("dimensions", if dims_ok { 0.0 } else { 1.0 }, 0.0),
            mk("affine_form", affine_worst, 1e-12),
            mk("jacobian", jac_worst, 1e-5),
            mk("coupled_gradient", grad_worst, 1e-5),
            mk("coupled_convexity", convex_worst, 1e-10),
        ],
    }
}
