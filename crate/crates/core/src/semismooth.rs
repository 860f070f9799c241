//! Damped semismooth Newton for mixed complementarity systems.
//!
//! A system is a list of rows; an equation row asks `a(v) = 0`, a
//! complementarity row asks `a(v) >= 0, b(v) >= 0, a(v) b(v) = 0`. The
//! complementarity rows are rewritten with the Fischer–Burmeister function
//! `φ(a, b) = sqrt(a² + b²) - a - b` and the square system `Φ(v) = 0` is
//! solved by Newton steps, falling back to Levenberg–Marquardt steps when the
//! generalized Jacobian is singular, with an Armijo search on `|Φ|²/2`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Row {
    Equation,
    Complementarity,
}

pub(crate) trait MixedComplementarity {
    fn rows(&self) -> &[Row];

    /// Raw row quantities `(a, b)`; `b` is ignored on equation rows.
    fn values(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)>;

    /// Jacobians of `a` and `b` with respect to `v`.
    fn jacobians(&self, v: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NewtonOptions {
    pub tol: f64,
    /// Once `|Φ|_∞ <= tol`, keep stepping towards this residual for as long
    /// as every step at least halves it.
    pub polish: f64,
    pub max_iter: usize,
}

impl NewtonOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self { tol, polish: tol, max_iter }
    }
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self::new(1e-11, 200)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NewtonOutcome {
    pub v: DVector<f64>,
    /// `|Φ(v)|_∞`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rank_deficient: bool,
}

/// Stable evaluation of `sqrt(a² + b²) - a - b`.
pub(crate) fn fischer_burmeister(a: f64, b: f64) -> f64 {
    let r = a.hypot(b);
    let s = a + b;
    if s > 0.0 {
        -2.0 * a * b / (r + s)
    } else {
        r - s
    }
}

fn residual_vector(rows: &[Row], a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(
        rows.len(),
        rows.iter().enumerate().map(|(i, r)| match r {
            Row::Equation => a[i],
            Row::Complementarity => fischer_burmeister(a[i], b[i]),
        }),
    )
}

fn generalized_jacobian(
    rows: &[Row],
    a: &DVector<f64>,
    b: &DVector<f64>,
    ja: &DMatrix<f64>,
    jb: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut jac = ja.clone();
    for (i, r) in rows.iter().enumerate() {
        if *r == Row::Equation {
            continue;
        }
        let rad = a[i].hypot(b[i]);
        let (da, db) = if rad > 0.0 {
            (a[i] / rad - 1.0, b[i] / rad - 1.0)
        } else {
            let c = std::f64::consts::FRAC_1_SQRT_2 - 1.0;
            (c, c)
        };
        let mut row = jac.row_mut(i);
        row.scale_mut(da);
        row += jb.row(i) * db;
    }
    jac
}

fn merit<S: MixedComplementarity + ?Sized>(sys: &S, v: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
    let (a, b) = sys.values(v).ok()?;
    let phi = residual_vector(sys.rows(), &a, &b);
    let psi = 0.5 * phi.norm_squared();
    psi.is_finite().then_some((psi, phi))
}

fn levenberg_marquardt_step(jac: &DMatrix<f64>, phi: &DVector<f64>, nu: f64) -> Option<DVector<f64>> {
    let n = jac.ncols();
    let mut stacked = DMatrix::zeros(jac.nrows() + n, n);
    stacked.view_mut((0, 0), (jac.nrows(), n)).copy_from(jac);
    let s = nu.sqrt();
    for i in 0..n {
        stacked[(jac.nrows() + i, i)] = s;
    }
    let mut rhs = DVector::zeros(jac.nrows() + n);
    rhs.rows_mut(0, jac.nrows()).copy_from(&(-phi));
    let qr = stacked.qr();
    qr.q_tr_mul(&mut rhs);
    let r = qr.r();
    r.solve_upper_triangular(&rhs.rows(0, n).into_owned()).filter(|d| d.iter().all(|x| x.is_finite()))
}

const NONMONOTONE_MEMORY: usize = 8;

/// Polishing steps allowed without halving the best residual.
const POLISH_PATIENCE: usize = 4;

pub(crate) fn solve<S: MixedComplementarity + ?Sized>(
    sys: &S,
    v0: DVector<f64>,
    opts: NewtonOptions,
) -> Result<NewtonOutcome> {
    let rows = sys.rows();
    let mut v = v0;
    let (mut psi, mut phi) = merit(sys, &v).ok_or(Error::NonFinite("complementarity system"))?;
    let mut rank_deficient = false;
    let mut iterations = 0;
    let mut converged = false;
    // Nonmonotone Armijo reference: the largest merit over the last few steps.
    let mut history = std::collections::VecDeque::with_capacity(NONMONOTONE_MEMORY);
    history.push_back(psi);

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, f64)> = None;
    let mut polish_misses = 0;

    while iterations < opts.max_iter {
        let res = phi.amax();
        if res <= opts.tol {
            converged = true;
            if best.as_ref().map_or(true, |b| res <= 0.5 * b.0) {
                best = Some((res, v.clone(), phi.clone(), psi));
                polish_misses = 0;
            } else {
                polish_misses += 1;
            }
            if res <= opts.polish || polish_misses >= POLISH_PATIENCE {
                break;
            }
        }
        iterations += 1;
        let (a, b) = sys.values(&v)?;
        let (ja, jb) = sys.jacobians(&v)?;
        let jac = generalized_jacobian(rows, &a, &b, &ja, &jb);
        let grad = jac.transpose() * &phi;

        let scale = 1.0 + v.amax();
        let newton = jac
            .clone()
            .lu()
            .solve(&(-&phi))
            .filter(|d| d.iter().all(|x| x.is_finite()) && d.amax() <= 1e8 * scale);
        rank_deficient = newton.is_none();

        let nu = phi.norm().clamp(1e-12, 1e2);
        let reference = history.iter().copied().fold(psi, f64::max);
        let phi_k = phi.clone();
        let mut lm_cache: Option<Option<DVector<f64>>> = None;
        let mut lm = || lm_cache.get_or_insert_with(|| levenberg_marquardt_step(&jac, &phi_k, nu)).clone();

        // Close to a solution take a full step when it at least halves the
        // merit: Newton first, then the regularized step, which still makes
        // progress near nonisolated solutions where Newton steps are huge.
        let full = |d: &Option<DVector<f64>>| {
            d.as_ref().and_then(|d| {
                let slope = grad.dot(d);
                let trial = &v + d;
                merit(sys, &trial)
                    .filter(|(p, _)| slope < 0.0 && *p <= (psi + 1e-4 * slope).min(0.5 * psi))
                    .map(|(p, f)| (p, f, trial))
            })
        };
        let local = phi.amax() <= 1e-6 * (1.0 + v.amax());
        let best_full = if res <= opts.tol {
            // Polishing: near-singular Jacobians give Newton steps whose large
            // null-space parts leave a rounding floor, so also try the
            // regularized step and keep whichever does better.
            match (full(&newton), full(&lm())) {
                (Some(a), Some(b)) => Some(if a.0 <= b.0 { a } else { b }),
                (a, b) => a.or(b),
            }
        } else if local {
            full(&newton).or_else(|| full(&lm()))
        } else {
            None
        };
        if let Some((p, f, trial)) = best_full {
            v = trial;
            psi = p;
            phi = f;
            if history.len() == NONMONOTONE_MEMORY {
                history.pop_front();
            }
            history.push_back(psi);
            continue;
        }

        let mut accepted = false;
        // Newton first, then Levenberg–Marquardt, then steepest descent; the
        // later directions are only built when the earlier ones fail.
        for stage in 0..3 {
            let d = match stage {
                0 => match &newton {
                    Some(d) => d.clone(),
                    None => continue,
                },
                1 => match lm() {
                    Some(d) => d,
                    None => continue,
                },
                _ => -&grad,
            };
            let slope = grad.dot(&d);
            if !(slope < 0.0) {
                continue;
            }
            let mut t = 1.0;
            while t >= 1e-12 {
                let trial = &v + &d * t;
                if let Some((p, f)) = merit(sys, &trial) {
                    if p <= reference + 1e-4 * t * slope {
                        v = trial;
                        psi = p;
                        phi = f;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
        if history.len() == NONMONOTONE_MEMORY {
            history.pop_front();
        }
        history.push_back(psi);
    }
    if let Some((res, bv, bphi, _)) = best {
        if res < phi.amax() {
            v = bv;
            phi = bphi;
        }
    }
    if !converged && phi.amax() <= opts.tol {
        converged = true;
    }
    Ok(NewtonOutcome { residual: phi.amax(), v, iterations, converged, rank_deficient })
}
