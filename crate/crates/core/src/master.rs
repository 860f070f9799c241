//! The master QVI over `conv(Y) ∩ K_g(x)`, solved in simplex coordinates.
//!
//! With `x = Yλ` the KKT system pulled back to `λ` reads
//! `Yᵀ[F(x) + ∇_y g(x,x) μ] - σ + τ·1 = 0`, `λ >= 0 ⊥ σ >= 0`, `Σλ = 1`,
//! `μ >= 0 ⊥ -g(x,x) >= 0`. Eliminating `σ` leaves a square mixed
//! complementarity system in `(λ, μ, τ)` that is handed to the semismooth
//! Newton solver. If Newton fails from every start, a sequential-VI loop
//! freezes the second argument of `g` and re-solves until the freeze point
//! stops moving.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::io::dvec;
use crate::linalg::hstack;
use crate::model::QviProblem;
use crate::semismooth::{self, MixedComplementarity, NewtonOptions, Row};

/// Columns `y¹ … y^k`, all in `K_h`, pairwise distinct.
#[derive(Debug, Clone)]
pub struct ColumnPool {
    n: usize,
    columns: Vec<DVector<f64>>,
}

impl ColumnPool {
    pub fn new(problem: &QviProblem, first: DVector<f64>, tol: f64) -> Result<Self> {
        let mut pool = Self { n: problem.n(), columns: Vec::new() };
        pool.push(problem, first, tol)?;
        Ok(pool)
    }

    /// Adds a column after checking `y ∈ K_h` and that it is not a duplicate.
    pub fn push(&mut self, problem: &QviProblem, y: DVector<f64>, tol: f64) -> Result<()> {
        check_dim(self.n, y.len())?;
        if !problem.easy_set.contains(&y, tol)? {
            return Err(Error::InvalidInput("column outside the easy set".into()));
        }
        if self.contains_column(&y) {
            return Err(Error::InvalidInput("duplicate column".into()));
        }
        self.columns.push(y);
        Ok(())
    }

    /// Keeps the columns whose index passes `keep`, in order.
    pub fn retain(&mut self, mut keep: impl FnMut(usize) -> bool) {
        let mut i = 0;
        self.columns.retain(|_| {
            i += 1;
            keep(i - 1)
        });
    }

    pub fn contains_column(&self, y: &DVector<f64>) -> bool {
        self.columns.iter().any(|c| (c - y).amax() <= 1e-12)
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn columns(&self) -> &[DVector<f64>] {
        &self.columns
    }

    /// `Y` as an `n x k` matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        hstack(&self.columns, self.n)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MasterSolution {
    #[serde(with = "dvec")]
    pub x: DVector<f64>,
    #[serde(with = "dvec")]
    pub lambda: DVector<f64>,
    /// `F(x)`.
    #[serde(with = "dvec")]
    pub z_m: DVector<f64>,
    #[serde(with = "dvec")]
    pub mu: DVector<f64>,
    /// Multiplier of `Σλ = 1`.
    pub tau: f64,
    pub kkt_residual: f64,
    pub inner_iterations: usize,
    /// The Newton system was singular at the last step (no constraint
    /// qualification is certified in that case).
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct MasterOptions {
    pub tol: f64,
    pub mu_max: f64,
    pub restarts: usize,
    pub max_newton: usize,
    pub max_fixed_point: usize,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self { tol: 1e-10, mu_max: 1e8, restarts: 5, max_newton: 300, max_fixed_point: 50 }
    }
}

/// The pulled-back system with columns taken relative to a reference point
/// `c`: `x = c + Dλ` with `D = Y - c·1ᵀ`, which equals `Yλ` once `Σλ = 1`.
/// The weight rows become `Dᵀw + τ'` with `τ' = τ + cᵀw`; both terms stay
/// small when `c` is near the solution, whereas `Yᵀw` and `τ` are large and
/// cancel, which puts a floor on the attainable accuracy.
struct MasterSystem<'a> {
    problem: &'a QviProblem,
    center: DVector<f64>,
    d: DMatrix<f64>,
    /// `A D` for affine operators.
    ad: Option<DMatrix<f64>>,
    /// Second argument of `g` when frozen.
    frozen: Option<DVector<f64>>,
    /// Weight row `j` is divided by `|d_j|_∞`, so that columns close to the
    /// center are resolved to relative rather than absolute accuracy.
    row_scale: DVector<f64>,
    rows: Vec<Row>,
}

impl<'a> MasterSystem<'a> {
    fn new(problem: &'a QviProblem, y: &DMatrix<f64>, center: DVector<f64>) -> Self {
        let k = y.ncols();
        let m = problem.m();
        let mut rows = vec![Row::Complementarity; k + m];
        rows.push(Row::Equation);
        let mut d = y.clone();
        for mut col in d.column_iter_mut() {
            col -= &center;
        }
        let ad = problem.operator.affine_form().map(|(a, _)| a * &d);
        let floor = 1e-12 * (1.0 + center.amax());
        let lens: Vec<f64> = d.column_iter().map(|c| c.amax()).collect();
        // A column at the center has the row `τ' >= 0`; it gets the finest
        // scale in use, since `τ'` is compared against the nearest column.
        let finest = lens.iter().filter(|&&l| l > 0.0).fold(f64::INFINITY, |a, &l| a.min(l.max(floor)));
        let at_center = if finest.is_finite() { 1.0 / finest } else { 1.0 };
        let row_scale = DVector::from_iterator(k, lens.iter().map(|&l| if l > 0.0 { 1.0 / l.max(floor) } else { at_center }));
        Self { problem, center, d, ad, frozen: None, row_scale, rows }
    }

    fn k(&self) -> usize {
        self.d.ncols()
    }

    fn point(&self, lam: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.d * lam
    }

    fn m(&self) -> usize {
        self.problem.m()
    }

    fn split<'v>(&self, v: &'v DVector<f64>) -> (nalgebra::DVectorView<'v, f64>, DVector<f64>, f64) {
        let (k, m) = (self.k(), self.m());
        (v.rows(0, k), v.rows(k, m).into_owned(), v[k + m])
    }

    fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        self.problem.coupled.eval(x, self.frozen.as_ref().unwrap_or(x))
    }

    fn g_mu(&self, x: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        self.problem.coupled.grad_y_times(x, self.frozen.as_ref().unwrap_or(x), mu)
    }

    /// `w = F(x) + ∇_y g μ`.
    fn stationarity(&self, x: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        let mut w = self.problem.operator.eval(x);
        if self.m() > 0 {
            w += self.g_mu(x, mu);
        }
        w
    }

    /// `Dᵀw`.
    fn pulled_back(&self, x: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
        self.d.tr_mul(&self.stationarity(x, mu))
    }

    /// Directional derivatives of `f` along each pool column, as columns.
    fn along_columns(&self, x: &DVector<f64>, rows: usize, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(rows, self.k());
        let scale = 1.0 + x.amax();
        for (j, col) in self.d.column_iter().enumerate() {
            let len = col.amax();
            if len == 0.0 {
                continue;
            }
            let h = 1e-4 * scale / len;
            let fp = f(&(x + col * h));
            let fm = f(&(x - col * h));
            out.set_column(j, &((fp - fm) / (2.0 * h)));
        }
        out
    }
}

impl MixedComplementarity for MasterSystem<'_> {
    fn rows(&self) -> &[Row] {
        &self.rows
    }

    fn values(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (k, m) = (self.k(), self.m());
        let (lam, mu, tau) = self.split(v);
        let x = self.point(&lam.into_owned());
        let s = self.pulled_back(&x, &mu);
        let g = self.g(&x);
        let mut a = DVector::zeros(k + m + 1);
        let mut b = DVector::zeros(k + m + 1);
        for j in 0..k {
            a[j] = lam[j];
            b[j] = (s[j] + tau) * self.row_scale[j];
        }

        for i in 0..m {
            a[k + i] = mu[i];
            b[k + i] = -g[i];
        }
        a[k + m] = lam.sum() - 1.0;
        Ok((a, b))
    }

    fn jacobians(&self, v: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (k, m) = (self.k(), self.m());
        let n = self.d.nrows();
        let (lam, mu, _) = self.split(v);
        let x = self.point(&lam.into_owned());
        let len = k + m + 1;
        let mut ja = DMatrix::zeros(len, len);
        let mut jb = DMatrix::zeros(len, len);
        for i in 0..k + m {
            ja[(i, i)] = 1.0;
        }
        for j in 0..k {
            ja[(k + m, j)] = 1.0;
        }

        // d/dλ of F(Yλ) + ∇_y g μ, as n x k.
        let mut dw = match &self.ad {
            Some(ad) => ad.clone(),
            None => match self.problem.operator.jacobian(&x) {
                Some(jf) => jf * &self.d,
                None => self.along_columns(&x, n, |z| self.problem.operator.eval(z)),
            },
        };
        if m > 0 {
            let coupled = &self.problem.coupled;
            let grad = coupled.grad_y(&x, self.frozen.as_ref().unwrap_or(&x));
            let exact = match &self.frozen {
                None => coupled.diagonal_jacobians(&x, &mu),
                Some(f) => coupled.hessian_y_weighted(&x, f, &mu).map(|h| (grad.transpose(), h)),
            };
            let dg = match exact {
                Some((dg, dgw)) => {
                    dw += dgw * &self.d;
                    dg * &self.d
                }
                None => {
                    dw += self.along_columns(&x, n, |z| self.g_mu(z, &mu));
                    self.along_columns(&x, m, |z| self.g(z))
                }
            };
            jb.view_mut((0, k), (k, m)).copy_from(&self.d.tr_mul(&grad));
            jb.view_mut((k, 0), (m, k)).copy_from(&(-dg));
        }
        jb.view_mut((0, 0), (k, k)).copy_from(&self.d.tr_mul(&dw));
        for j in 0..k {
            jb[(j, k + m)] = 1.0;
            jb.row_mut(j).scale_mut(self.row_scale[j]);
        }
        Ok((ja, jb))
    }
}

/// Worst violation of the pulled-back KKT system at `cand`.
///
/// `τ` is recomputed as `-λᵀs` and `σ = s + τ`, so stationarity holds by
/// construction; the residual collects `|min(λ_j, σ_j)|`, `|Σλ - 1|`,
/// `|min(μ_i, -g_i(x,x))|` and `|x - Yλ|_∞`.
pub fn master_kkt_residual(problem: &QviProblem, pool: &ColumnPool, cand: &MasterSolution) -> Result<f64> {
    check_dim(pool.len(), cand.lambda.len())?;
    check_dim(problem.n(), cand.x.len())?;
    check_dim(problem.m(), cand.mu.len())?;
    let sys = MasterSystem::new(problem, &pool.matrix(), cand.x.clone());
    Ok(residual_with(&sys, &cand.lambda, &cand.mu, &cand.x))
}

fn residual_with(sys: &MasterSystem<'_>, lam: &DVector<f64>, mu: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let s = sys.pulled_back(x, mu);
    let tau = -lam.dot(&s);
    let mut res = (lam.sum() - 1.0).abs();
    for j in 0..lam.len() {
        res = res.max(lam[j].min(s[j] + tau).abs());
    }
    let g = sys.g(x);
    for i in 0..mu.len() {
        res = res.max(mu[i].min(-g[i]).abs());
    }
    res = res.max((x - sys.point(lam)).amax());
    if res.is_nan() {
        f64::INFINITY
    } else {
        res
    }
}

fn finalize(sys: &MasterSystem<'_>, v: &DVector<f64>, iterations: usize, rank_deficient: bool) -> MasterSolution {
    let (k, m) = (sys.k(), sys.m());
    let mut lambda = v.rows(0, k).map(|l| l.max(0.0));
    let total = lambda.sum();
    if total > 0.0 && total.is_finite() {
        lambda /= total;
    } else {
        lambda = DVector::from_element(k, 1.0 / k as f64);
    }
    let mu = v.rows(k, m).map(|u| u.max(0.0));
    let x = sys.point(&lambda);
    let z_m = sys.problem.operator.eval(&x);
    let w = sys.stationarity(&x, &mu);
    let tau = -lambda.dot(&sys.d.tr_mul(&w)) - sys.center.dot(&w);
    let kkt_residual = residual_with(sys, &lambda, &mu, &x);
    MasterSolution { x, lambda, z_m, mu, tau, kkt_residual, inner_iterations: iterations, rank_deficient }
}

fn start_vector(sys: &MasterSystem<'_>, lambda: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    let (k, m) = (sys.k(), sys.m());
    let x = sys.point(lambda);
    let s = sys.pulled_back(&x, mu);
    let mut v = DVector::zeros(k + m + 1);
    v.rows_mut(0, k).copy_from(lambda);
    v.rows_mut(k, m).copy_from(mu);
    v[k + m] = -lambda.dot(&s);
    v
}

/// [`solve_master_with`] with default options and the given tolerance.
pub fn solve_master(
    problem: &QviProblem,
    pool: &ColumnPool,
    warm: Option<&MasterSolution>,
    tol: f64,
) -> Result<MasterSolution> {
    solve_master_with(problem, pool, warm, &MasterOptions { tol, ..MasterOptions::default() })
}

/// Solves the master QVI to `opts.tol·(1 + |F(x)|_∞)` in the residual
/// of [`master_kkt_residual`]. A warm start from a smaller pool is padded with
/// zero weights.
pub fn solve_master_with(
    problem: &QviProblem,
    pool: &ColumnPool,
    warm: Option<&MasterSolution>,
    opts: &MasterOptions,
) -> Result<MasterSolution> {
    if pool.is_empty() {
        return Err(Error::InvalidInput("empty column pool".into()));
    }
    check_dim(problem.n(), pool.dim())?;
    let (k, m) = (pool.len(), problem.m());
    let y = pool.matrix();
    if k == 1 {
        let y1 = &pool.columns()[0];
        let g = problem.coupled.eval(y1, y1);
        if g.iter().any(|v| *v > opts.tol) {
            return Err(Error::InfeasibleMaster(format!("g(y1, y1) has maximum {:.3e}", g.max())));
        }
    }
    let (lam0, mu0) = match warm {
        Some(w) if w.lambda.len() <= k && w.mu.len() == m => {
            let mut l = DVector::zeros(k);
            l.rows_mut(0, w.lambda.len()).copy_from(&w.lambda);
            (l, w.mu.clone())
        }
        Some(_) => return Err(Error::InvalidInput("warm start does not fit the pool".into())),
        None => (DVector::from_element(k, 1.0 / k as f64), DVector::zeros(m)),
    };
    let uniform = DVector::from_element(k, 1.0 / k as f64);
    let center = &y * &lam0;
    let scale = 1.0 + problem.operator.eval(&center).amax();
    let mut sys = MasterSystem::new(problem, &y, center);
    let newton = NewtonOptions { tol: 0.1 * opts.tol * scale, polish: 1e-15 * scale, max_iter: opts.max_newton };

    let mut best: Option<MasterSolution> = None;
    let keep = |cand: MasterSolution, best: &mut Option<MasterSolution>| {
        if best.as_ref().map_or(true, |b| cand.kkt_residual < b.kkt_residual) {
            *best = Some(cand);
        }
    };
    let mut iterations = 0;
    for r in 0..=opts.restarts {
        let theta = r as f64 / (opts.restarts + 1) as f64;
        let lam = &lam0 * (1.0 - theta) + &uniform * theta;
        let mu = &mu0 * (1.0 - theta) + DVector::from_element(m, theta);
        let out = semismooth::solve(&sys, start_vector(&sys, &lam, &mu), newton)?;
        iterations += out.iterations;
        let cand = finalize(&sys, &out.v, iterations, out.rank_deficient);
        let done = accepts(&cand, opts.tol);
        keep(cand, &mut best);
        if done {
            return check_mu(best.unwrap(), opts.mu_max);
        }
    }

    // Sequential VI: freeze the second argument of g and iterate.
    if m > 0 {
        let start = best.clone().unwrap();
        let mut lam = start.lambda.clone();
        let mut mu = start.mu.clone();
        let mut anchor = start.x.clone();
        for _ in 0..opts.max_fixed_point {
            sys.frozen = Some(anchor.clone());
            let out = semismooth::solve(&sys, start_vector(&sys, &lam, &mu), newton)?;
            iterations += out.iterations;
            let frozen = finalize(&sys, &out.v, iterations, out.rank_deficient);
            let moved = (&frozen.x - &anchor).amax();
            lam = frozen.lambda.clone();
            mu = frozen.mu.clone();
            anchor = frozen.x.clone();
            if moved <= opts.tol {
                break;
            }
        }
        sys.frozen = None;
        let v = start_vector(&sys, &lam, &mu);
        let cand = finalize(&sys, &v, iterations, false);
        let done = accepts(&cand, opts.tol);
        keep(cand, &mut best);
        if done {
            return check_mu(best.unwrap(), opts.mu_max);
        }
    }

    let best = best.unwrap();
    if accepts(&best, opts.tol * STALL_FACTOR) {
        return check_mu(best, opts.mu_max);
    }
    Err(Error::InnerNonconvergence { residual: best.kkt_residual, best: best.x })
}

/// Stalled Newton runs whose best point is within this factor of the target
/// are still accepted.
const STALL_FACTOR: f64 = 1e3;

/// Residual test relative to the size of `F(x)`.
fn accepts(sol: &MasterSolution, tol: f64) -> bool {
    sol.kkt_residual <= tol * (1.0 + sol.z_m.amax())
}

fn check_mu(sol: MasterSolution, cap: f64) -> Result<MasterSolution> {
    let norm = sol.mu.amax();
    if norm > cap {
        return Err(Error::MultiplierBlowup { norm, cap });
    }
    Ok(sol)
}
