//! The outer Dantzig–Wolfe loop.
//!
//! Each iteration solves the master QVI over the current column pool, builds
//! the subproblem operator around the master point `x^k`, solves the
//! subproblem VI over `K_h` (optionally split into Jacobi blocks), and stops
//! once the new column no longer improves on `x^k`: the gap
//! `⟨ζ^k, y^{k+1} - x^k⟩` is above `-gap_tol·(1 + |ζ^k|₂)` and the QVI KKT
//! residual at `(x^k, μ^k)` is within `kkt_tol`. Otherwise the column joins
//! the pool. A step `|y^{k+1} - x^k|_∞` below `step_tol·(1 + |x^k|_∞)`, or a
//! column already in the pool, without an acceptable residual ends the run as
//! stalled.

mod config;
mod subproblem;

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

pub use config::{DwConfig, FhatMode, Omega, QMode};
pub use subproblem::{build_fhat, build_gamma, gap, SubproblemOperator};

use crate::error::{check_dim, Error, Result};
use crate::master::{solve_master_with, ColumnPool, MasterOptions, MasterSolution};
use crate::model::{qvi_kkt_residual, QviProblem, QviSolution};
use crate::vi::{solve_vi, ViResult};

/// Diagnostics of one outer iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `⟨ζ^k, y^{k+1} - x^k⟩`.
    pub gap_value: f64,
    /// `|y^{k+1} - x^k|₂`.
    pub step_norm: f64,
    pub step_norm_inf: f64,
    pub mu_norm_inf: f64,
    pub zeta_norm: f64,
    /// Smallest gap over the pool columns (nonnegative up to master accuracy).
    pub min_pool_gap: f64,
    pub master_residual: f64,
    pub subproblem_residual: f64,
    pub q: f64,
    pub pool_size: usize,
    pub y_norm_inf: f64,
    pub master_time: f64,
    pub subproblem_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DwStatus {
    Converged,
    MaxOuter,
    MuUnbounded,
    InnerFailure,
}

#[derive(Debug, Clone, Serialize)]
pub struct DwReport {
    pub status: DwStatus,
    pub iterations: usize,
    pub solution: QviSolution,
    pub records: Vec<IterationRecord>,
    pub total_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl DwReport {
    pub fn converged(&self) -> bool {
        self.status == DwStatus::Converged
    }
}

/// Runs the decomposition from `y1`, which must lie in `K_g(y1) ∩ K_h`.
pub fn run_dw(problem: &QviProblem, y1: &DVector<f64>, config: &DwConfig) -> Result<DwReport> {
    run_dw_observed(problem, y1, config, |_| {})
}

/// [`run_dw`] with a callback invoked after every outer iteration.
pub fn run_dw_observed(
    problem: &QviProblem,
    y1: &DVector<f64>,
    config: &DwConfig,
    mut observer: impl FnMut(&IterationRecord),
) -> Result<DwReport> {
    config.validate()?;
    check_dim(problem.n(), y1.len())?;
    let omega = config.omega.resolve(problem.m())?;
    let feas_tol = config.inner_tol.max(1e-9);
    if !problem.is_feasible(y1, feas_tol)? {
        return Err(Error::InvalidInput("initial point infeasible".into()));
    }
    let start = Instant::now();
    let master_opts = MasterOptions { tol: config.master_tol, mu_max: config.mu_max, ..MasterOptions::default() };
    let mut pool = ColumnPool::new(problem, y1.clone(), feas_tol)?;
    let mut records = Vec::new();
    let mut warm: Option<MasterSolution> = None;

    let finish = |status: DwStatus,
                  x: DVector<f64>,
                  mu: DVector<f64>,
                  records: Vec<IterationRecord>,
                  message: Option<String>|
     -> Result<DwReport> {
        let solution = QviSolution::certify(problem, x, mu)?;
        Ok(DwReport {
            status,
            iterations: records.len(),
            solution,
            records,
            total_time: start.elapsed().as_secs_f64(),
            message,
        })
    };
    let fallback = |warm: &Option<MasterSolution>| match warm {
        Some(w) => (w.x.clone(), w.mu.clone()),
        None => (y1.clone(), DVector::zeros(problem.m())),
    };

    for k in 1..=config.max_outer {
        let t0 = Instant::now();
        let master = match solve_master_with(problem, &pool, warm.as_ref(), &master_opts) {
            Ok(m) => m,
            Err(Error::MultiplierBlowup { norm, cap }) => {
                let (x, mu) = fallback(&warm);
                return finish(DwStatus::MuUnbounded, x, mu, records, Some(format!("|mu| = {norm:.3e} > {cap:.3e}")));
            }
            Err(e @ (Error::InnerNonconvergence { .. } | Error::InfeasibleMaster(_))) => {
                match warm.as_ref().and_then(|w| compact_and_retry(problem, &mut pool, w, &master_opts)) {
                    Some(m) => m,
                    None => {
                        let (x, mu) = fallback(&warm);
                        return finish(DwStatus::InnerFailure, x, mu, records, Some(format!("master: {e}")));
                    }
                }
            }
            Err(e) => return Err(e),
        };
        let master_time = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let mut sub = SubproblemOperator::new(problem, &master, &omega, config.fhat_mode)?;
        let blocks = config.jacobi.then_some(problem.blocks.as_slice());
        sub.q = match config.q_mode {
            QMode::None => 0.0,
            QMode::Fixed(q) => q,
            QMode::Auto(c) => sub.auto_regularization(c, blocks, config.seed.wrapping_add(k as u64)),
        };
        let start = pool.columns().last().expect("pool is never empty");
        let mut solved = solve_subproblem(problem, &sub, start, config);
        // Without strict monotonicity the subproblem may have several
        // solutions, and the warm start can hand back an old column.
        let repeats = |y: &DVector<f64>| pool.contains_column(y) || (y - &master.x).amax() <= config.step_tol * (1.0 + master.x.amax());
        if matches!(&solved, Ok((y, _)) if repeats(y)) && start != &master.x {
            if let Ok(cold) = solve_subproblem(problem, &sub, &master.x, config) {
                if !repeats(&cold.0) {
                    solved = Ok(cold);
                }
            }
        }
        let subproblem_time = t1.elapsed().as_secs_f64();
        let (y, sub_res) = match solved {
            Ok(v) => v,
            Err(e) => {
                return finish(DwStatus::InnerFailure, master.x, master.mu, records, Some(format!("subproblem: {e}")));
            }
        };

        let zeta = sub.zeta();
        let d = &y - &master.x;
        let gap_value = zeta.dot(&d);
        let zx = zeta.dot(&master.x);
        let min_pool_gap = pool.columns().iter().map(|c| zeta.dot(c) - zx).fold(f64::INFINITY, f64::min);
        let record = IterationRecord {
            k,
            gap_value,
            step_norm: d.norm(),
            step_norm_inf: d.amax(),
            mu_norm_inf: master.mu.amax(),
            zeta_norm: zeta.norm(),
            min_pool_gap,
            master_residual: master.kkt_residual,
            subproblem_residual: sub_res,
            q: sub.q,
            pool_size: pool.len(),
            y_norm_inf: y.amax(),
            master_time,
            subproblem_time,
        };
        observer(&record);
        records.push(record);

        if sub_res > 1e3 * config.inner_tol {
            let msg = format!("subproblem residual {sub_res:.3e} above tolerance");
            return finish(DwStatus::InnerFailure, master.x, master.mu, records, Some(msg));
        }
        let small_gap = gap_value >= -config.gap_tol * (1.0 + zeta.norm());
        let stalled = d.amax() <= config.step_tol * (1.0 + master.x.amax()) || pool.contains_column(&y);
        if small_gap || stalled {
            // The gap shrinks quadratically near a solution, so it is only a
            // trigger; the KKT residual decides.
            let kkt = qvi_kkt_residual(problem, &master.x, &master.mu)?;
            if kkt <= config.kkt_tol {
                return finish(DwStatus::Converged, master.x, master.mu, records, None);
            }
            if stalled {
                let msg = format!("stalled with KKT residual {kkt:.3e} above kkt_tol");
                return finish(DwStatus::InnerFailure, master.x, master.mu, records, Some(msg));
            }
        }
        if let Err(e) = pool.push(problem, y, feas_tol) {
            return finish(DwStatus::InnerFailure, master.x, master.mu, records, Some(format!("pool: {e}")));
        }
        warm = Some(master);
    }
    let (x, mu) = fallback(&warm);
    finish(DwStatus::MaxOuter, x, mu, records, None)
}

/// Large pools make the master degenerate. After a master failure the pool
/// is cut down to the support of the previous master solution plus the
/// columns added since, which keeps the previous `x` representable, and the
/// master is solved once more.
fn compact_and_retry(
    problem: &QviProblem,
    pool: &mut ColumnPool,
    warm: &MasterSolution,
    opts: &MasterOptions,
) -> Option<MasterSolution> {
    let old = warm.lambda.len();
    let keep: Vec<usize> = (0..pool.len()).filter(|&j| j >= old || warm.lambda[j] > 1e-12).collect();
    if keep.len() == pool.len() {
        return None;
    }
    let mut reduced = pool.clone();
    reduced.retain(|j| keep.binary_search(&j).is_ok());
    let mut start = warm.clone();
    let support: Vec<f64> = keep.iter().filter(|&&j| j < old).map(|&j| warm.lambda[j]).collect();
    start.lambda = DVector::from_vec(support);
    start.lambda /= start.lambda.sum();
    let master = solve_master_with(problem, &reduced, Some(&start), opts).ok()?;
    *pool = reduced;
    Some(master)
}

/// Solves the (possibly Jacobi-split) subproblem from `start`, the newest
/// column, whose subproblem is usually close; returns the new column and its
/// worst natural residual.
fn solve_subproblem(
    problem: &QviProblem,
    sub: &SubproblemOperator<'_>,
    start: &DVector<f64>,
    config: &DwConfig,
) -> Result<(DVector<f64>, f64)> {
    let tol = config.inner_tol;
    if !config.jacobi {
        let inst = sub.instance()?;
        let r = solve_vi(&inst, start, tol, config.max_inner)?;
        return Ok((r.y, r.natural_residual));
    }
    let parts = sub.jacobi_split(&problem.blocks)?;
    let solve_one = |(inst, r): (&crate::vi::ViInstance<'_>, &std::ops::Range<usize>)| -> Result<ViResult> {
        let y0 = start.rows(r.start, r.len()).into_owned();
        solve_vi(inst, &y0, tol, config.max_inner)
    };
    let results: Vec<ViResult> = if config.jacobi_parallel {
        parts.par_iter().zip(problem.blocks.par_iter()).map(solve_one).collect::<Result<_>>()?
    } else {
        parts.iter().zip(problem.blocks.iter()).map(solve_one).collect::<Result<_>>()?
    };
    let mut y = DVector::zeros(problem.n());
    let mut worst = 0.0f64;
    for (r, res) in problem.blocks.iter().zip(&results) {
        y.rows_mut(r.start, r.len()).copy_from(&res.y);
        worst = worst.max(res.natural_residual);
    }
    Ok((y, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_movset, gen_walrasian, MovSetData, WalrasianData};
    use nalgebra::DMatrix;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn movset_one_dimensional() {
        let s = |v: f64| DMatrix::from_element(1, 1, v);
        let p = MovSetData::new(s(1.0), dv(&[-4.0]), s(1.0), s(0.5), 1.0).unwrap().problem().unwrap();
        let r = run_dw(&p, &dv(&[0.0]), &DwConfig::default()).unwrap();
        assert!(r.converged(), "{r:?}");
        assert!((r.solution.x[0] - 2.0).abs() < 1e-8);
        assert!((r.solution.multipliers[0] - 1.0).abs() < 1e-8);
        assert!(r.solution.kkt_residual <= 1e-6);
    }

    #[test]
    fn walras_closed_form() {
        let p = WalrasianData::new(vec![DMatrix::from_element(1, 1, 1.0)], vec![dv(&[2.0])], vec![dv(&[3.0])], 4.0)
            .unwrap()
            .problem()
            .unwrap();
        let r = run_dw(&p, &dv(&[0.0, 0.0, 1.0]), &DwConfig::default()).unwrap();
        assert!(r.converged(), "{r:?}");
        assert!((&r.solution.x - dv(&[2.0, 2.0, 1.0])).amax() < 1e-8, "{r:?}");
    }

    #[test]
    fn infeasible_start_is_an_input_error() {
        let p = gen_movset(3, 1, 0.5, 1.0).unwrap();
        let e = run_dw(&p, &dv(&[10.0, 0.0, 0.0]), &DwConfig::default()).unwrap_err();
        assert!(e.to_string().contains("initial point infeasible"));
    }

    #[test]
    fn small_random_instances_converge() {
        for seed in 0..3 {
            let p = gen_movset(6, seed, 0.5, 1.0).unwrap();
            let r = run_dw(&p, &DVector::zeros(6), &DwConfig::default()).unwrap();
            assert!(r.converged() && r.solution.kkt_residual <= 1e-5, "{r:?}");
            let p = gen_walrasian(3, 3, None, seed).unwrap();
            let cfg = DwConfig { jacobi: true, ..DwConfig::default() };
            let r = run_dw(&p, p.initial_point.as_ref().unwrap(), &cfg).unwrap();
            assert!(r.converged() && r.solution.kkt_residual <= 1e-5, "{r:?}");
        }
    }

    #[test]
    fn observer_sees_every_iteration() {
        let p = gen_movset(4, 7, 0.5, 1.0).unwrap();
        let mut seen = 0;
        let r = run_dw_observed(&p, &DVector::zeros(4), &DwConfig::default(), |_| seen += 1).unwrap();
        assert_eq!(seen, r.records.len());
        assert_eq!(r.iterations, r.records.len());
    }
}
