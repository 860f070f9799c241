//! Direct solution of the full QVI KKT system in original coordinates:
//! `0 ∈ F(x) + ∇_y g(x,x) μ + N_{K_h}(x)`, `μ >= 0 ⊥ -g(x,x) >= 0`.
//!
//! Used as an independent oracle for the decomposition on small instances.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::fd_jacobian;
use crate::model::{QviProblem, QviSolution};
use crate::semismooth::{self, MixedComplementarity, NewtonOptions, Row};
use crate::vi::kkt::SetKkt;

#[derive(Debug, Clone, Copy)]
pub struct DirectOptions {
    /// Tolerance on the complementarity residual.
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 200, restarts: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectReport {
    pub converged: bool,
    pub iterations: usize,
    pub newton_residual: f64,
    pub solution: QviSolution,
    pub total_time: f64,
}

struct FullKkt<'a> {
    problem: &'a QviProblem,
    kkt: SetKkt<'a>,
    rows: Vec<Row>,
}

impl FullKkt<'_> {
    fn n(&self) -> usize {
        self.problem.n()
    }

    fn mu_offset(&self) -> usize {
        self.kkt.row_count()
    }

    fn parts(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let m = self.problem.m();
        (v.rows(0, self.n()).into_owned(), v.rows(self.mu_offset(), m).into_owned())
    }
}

impl MixedComplementarity for FullKkt<'_> {
    fn rows(&self) -> &[Row] {
        &self.rows
    }

    fn values(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (x, mu) = self.parts(v);
        let s = self.problem.stationarity(&x, &mu);
        let len = self.rows.len();
        let mut a = DVector::zeros(len);
        let mut b = DVector::zeros(len);
        self.kkt.fill_values(v, &s, &mut a, &mut b);
        let g = self.problem.coupled.eval(&x, &x);
        let off = self.mu_offset();
        for i in 0..mu.len() {
            a[off + i] = mu[i];
            b[off + i] = -g[i];
        }
        Ok((a, b))
    }

    fn jacobians(&self, v: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.n();
        let m = self.problem.m();
        let (x, mu) = self.parts(v);
        let len = self.rows.len();
        let off = self.mu_offset();
        let op = &self.problem.operator;
        let con = &self.problem.coupled;

        let mut ds = DMatrix::zeros(n, len);
        let jf = op.jacobian(&x).unwrap_or_else(|| fd_jacobian(|z| op.eval(z), &x, n));
        ds.view_mut((0, 0), (n, n)).copy_from(&jf);
        if m > 0 {
            let dgm = fd_jacobian(|z| con.grad_y_times(z, z, &mu), &x, n);
            let mut top = ds.view_mut((0, 0), (n, n));
            top += &dgm;
            ds.view_mut((0, off), (n, m)).copy_from(&con.grad_y(&x, &x));
        }
        let mut ja = DMatrix::zeros(len, len);
        let mut jb = DMatrix::zeros(len, len);
        self.kkt.fill_jacobians(v, &ds, &mut ja, &mut jb);
        if m > 0 {
            let dg = fd_jacobian(|z| con.eval(z, z), &x, m);
            for i in 0..m {
                ja[(off + i, off + i)] = 1.0;
                for j in 0..n {
                    jb[(off + i, j)] = -dg[(i, j)];
                }
            }
        }
        Ok((ja, jb))
    }
}

/// Solves the full KKT system by semismooth Newton, restarting from
/// perturbed points when a run stalls. `x0` defaults to the problem's
/// initial point, or the projection of the origin onto `K_h`.
pub fn solve_direct(problem: &QviProblem, x0: Option<&DVector<f64>>, opts: &DirectOptions) -> Result<DirectReport> {
    let start = Instant::now();
    let n = problem.n();
    let m = problem.m();
    let base = match x0.or(problem.initial_point.as_ref()) {
        Some(x) => {
            check_dim(n, x.len())?;
            problem.easy_set.project(x)?
        }
        None => problem.easy_set.project(&DVector::zeros(n))?,
    };
    let kkt = SetKkt::new(&problem.easy_set, n);
    let mut rows = kkt.rows();
    rows.extend(std::iter::repeat(Row::Complementarity).take(m));
    let sys = FullKkt { problem, kkt, rows };
    let off = sys.mu_offset();
    let len = off + m;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let newton = NewtonOptions::new(opts.tol, opts.max_iter);
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut iterations = 0;
    for r in 0..=opts.restarts {
        let mut x = base.clone();
        let mut mu = DVector::zeros(m);
        if r > 0 {
            let scale = 0.5 * r as f64 * (1.0 + base.amax());
            let noisy = DVector::from_fn(n, |i, _| base[i] + scale * rng.gen_range(-1.0..1.0));
            x = problem.easy_set.project(&noisy)?;
            mu.fill(r as f64);
        }
        let s = problem.stationarity(&x, &mu);
        let mut v = DVector::zeros(len);
        v.rows_mut(0, n).copy_from(&x);
        v.rows_mut(n, sys.kkt.extra_count()).copy_from(&sys.kkt.initial_extras(&s));
        v.rows_mut(off, m).copy_from(&mu);
        let out = match semismooth::solve(&sys, v, newton) {
            Ok(o) => o,
            Err(Error::NonFinite(_)) => continue,
            Err(e) => return Err(e),
        };
        iterations += out.iterations;
        let better = best.as_ref().map_or(true, |(res, _)| out.residual < *res);
        if better {
            best = Some((out.residual, out.v.clone()));
        }
        if out.converged {
            break;
        }
    }
    let (newton_residual, v) = best.ok_or(Error::NonFinite("direct KKT solve"))?;
    let (x, mu) = sys.parts(&v);
    let x = problem.easy_set.project(&x)?;
    let mu = mu.map(|u| u.max(0.0));
    let solution = QviSolution::certify(problem, x, mu)?;
    Ok(DirectReport {
        converged: newton_residual <= opts.tol,
        iterations,
        newton_residual,
        solution,
        total_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_movset, gen_walrasian, MovSetData, WalrasianData};

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn movset_one_dimensional() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let p = MovSetData::new(s(1.0), dv(&[-4.0]), s(1.0), s(0.5), 1.0).unwrap().problem().unwrap();
        let r = solve_direct(&p, None, &DirectOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.solution.x[0] - 2.0).abs() < 1e-10);
        assert!((r.solution.multipliers[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn walras_closed_form() {
        let p = WalrasianData::new(vec![DMatrix::from_element(1, 1, 1.0)], vec![dv(&[2.0])], vec![dv(&[3.0])], 4.0)
            .unwrap()
            .problem()
            .unwrap();
        let r = solve_direct(&p, None, &DirectOptions::default()).unwrap();
        assert!(r.converged, "{r:?}");
        assert!((&r.solution.x - dv(&[2.0, 2.0, 1.0])).amax() < 1e-10);
    }

    #[test]
    fn random_instances_reach_small_residual() {
        for seed in 0..3 {
            let p = gen_movset(5, seed, 0.5, 1.0).unwrap();
            let r = solve_direct(&p, None, &DirectOptions::default()).unwrap();
            assert!(r.converged && r.solution.kkt_residual < 1e-9, "{r:?}");
            let p = gen_walrasian(2, 3, None, seed).unwrap();
            let r = solve_direct(&p, None, &DirectOptions::default()).unwrap();
            assert!(r.converged && r.solution.kkt_residual < 1e-9, "{r:?}");
        }
    }
}
