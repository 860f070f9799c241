//! The subproblem operator `F^k(y) = F̂^k(y) + Γ^k(y) μ^k + q (y - x^k)` and its
//! Jacobi split.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::FhatMode;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{fd_jacobian, sub_block, sym_min_eigenvalue};
use crate::master::MasterSolution;
use crate::model::{Curvature, QviProblem};
use crate::vi::{ViInstance, ViOperator};

type MatFn<'a> = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'a>;
type VecFn<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'a>;

/// `y ↦ Γ^k(y)`, column `j` being `ω_j ∇_y g_j(x^k,x^k) + (1-ω_j) ∇_y g_j(y,x^k)`.
pub fn build_gamma<'a>(problem: &'a QviProblem, x_k: &DVector<f64>, omega: &DVector<f64>) -> Result<MatFn<'a>> {
    check_dim(problem.n(), x_k.len())?;
    check_dim(problem.m(), omega.len())?;
    let x_k = x_k.clone();
    let omega = omega.clone();
    let fixed = problem.coupled.grad_y(&x_k, &x_k);
    Ok(Box::new(move |y| {
        let free = problem.coupled.grad_y(y, &x_k);
        let mut out = free.clone();
        for j in 0..omega.len() {
            let col = fixed.column(j) * omega[j] + free.column(j) * (1.0 - omega[j]);
            out.set_column(j, &col);
        }
        out
    }))
}

/// `y ↦ F̂^k(y)` for the chosen mode.
pub fn build_fhat<'a>(problem: &'a QviProblem, master: &MasterSolution, mode: FhatMode) -> Result<VecFn<'a>> {
    check_dim(problem.n(), master.x.len())?;
    let x_k = master.x.clone();
    let z = master.z_m.clone();
    Ok(match mode {
        FhatMode::Constant => Box::new(move |_| z.clone()),
        FhatMode::Exact => Box::new(move |y| problem.operator.eval(y)),
        FhatMode::FirstOrder => {
            let jac = problem
                .operator
                .jacobian(&x_k)
                .ok_or_else(|| Error::Config("first-order approximation needs an operator Jacobian".into()))?;
            Box::new(move |y| &z + &jac * (y - &x_k))
        }
    })
}

/// `⟨ζ^k, y - x^k⟩` with `ζ^k = z_m^k + Γ^k(x^k) μ^k`.
pub fn gap(y: &DVector<f64>, master: &MasterSolution, gamma_at_xk: &DMatrix<f64>) -> f64 {
    let zeta = &master.z_m + gamma_at_xk * &master.mu;
    zeta.dot(&(y - &master.x))
}

/// The assembled subproblem operator at iteration `k`.
pub struct SubproblemOperator<'a> {
    problem: &'a QviProblem,
    pub x_k: DVector<f64>,
    pub mu_k: DVector<f64>,
    pub z_m_k: DVector<f64>,
    omega: DVector<f64>,
    mode: FhatMode,
    /// `Q^k = q I`.
    pub q: f64,
    jac: Option<DMatrix<f64>>,
    grad_xk: DMatrix<f64>,
    /// `(1 - ω) ∘ μ`.
    free_weights: DVector<f64>,
    /// `∇_y g(x^k,x^k) (ω ∘ μ)`.
    fixed_part: DVector<f64>,
}

impl<'a> SubproblemOperator<'a> {
    pub fn new(problem: &'a QviProblem, master: &MasterSolution, omega: &DVector<f64>, mode: FhatMode) -> Result<Self> {
        check_dim(problem.n(), master.x.len())?;
        check_dim(problem.m(), master.mu.len())?;
        check_dim(problem.m(), omega.len())?;
        let x_k = master.x.clone();
        let jac = match mode {
            FhatMode::FirstOrder => Some(
                problem
                    .operator
                    .jacobian(&x_k)
                    .ok_or_else(|| Error::Config("first-order approximation needs an operator Jacobian".into()))?,
            ),
            _ => None,
        };
        let grad_xk = problem.coupled.grad_y(&x_k, &x_k);
        let mut free_weights = master.mu.component_mul(&omega.map(|w| 1.0 - w));
        if problem.coupled.curvature() == Curvature::Linear {
            // ∇_y g(·, x^k) is constant, so every ω gives the same Γ^k.
            free_weights.fill(0.0);
        }
        let fixed_weights = &master.mu - &free_weights;
        let fixed_part = &grad_xk * &fixed_weights;
        Ok(Self {
            problem,
            x_k,
            mu_k: master.mu.clone(),
            z_m_k: master.z_m.clone(),
            omega: omega.clone(),
            mode,
            q: 0.0,
            jac,
            grad_xk,
            free_weights,
            fixed_part,
        })
    }

    pub fn dim(&self) -> usize {
        self.x_k.len()
    }

    pub fn omega(&self) -> &DVector<f64> {
        &self.omega
    }

    pub fn gamma_at(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let free = self.problem.coupled.grad_y(y, &self.x_k);
        let mut out = free.clone();
        for j in 0..self.omega.len() {
            out.set_column(j, &(self.grad_xk.column(j) * self.omega[j] + free.column(j) * (1.0 - self.omega[j])));
        }
        out
    }

    pub fn fhat_at(&self, y: &DVector<f64>) -> DVector<f64> {
        match self.mode {
            FhatMode::Constant => self.z_m_k.clone(),
            FhatMode::Exact => self.problem.operator.eval(y),
            FhatMode::FirstOrder => &self.z_m_k + self.jac.as_ref().unwrap() * (y - &self.x_k),
        }
    }

    /// `Γ^k(y) μ^k`.
    pub fn gamma_mu(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = self.fixed_part.clone();
        if self.free_weights.iter().any(|w| *w != 0.0) {
            out += self.problem.coupled.grad_y_times(y, &self.x_k, &self.free_weights);
        }
        out
    }

    pub fn eval(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = self.fhat_at(y) + self.gamma_mu(y);
        if self.q != 0.0 {
            out.axpy(self.q, &(y - &self.x_k), 1.0);
        }
        out
    }

    /// `ζ^k = z_m^k + ∇_y g(x^k,x^k) μ^k = F^k(x^k)`.
    pub fn zeta(&self) -> DVector<f64> {
        &self.z_m_k + &self.grad_xk * &self.mu_k
    }

    /// `Γ^k(x^k)`.
    pub fn gamma_at_xk(&self) -> &DMatrix<f64> {
        &self.grad_xk
    }

    /// `(M, c)` with `F^k(y) = M y + c`, if `F^k` is affine.
    pub fn affine_form(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let (mut m, mut c) = self.affine_form_unregularized()?;
        for i in 0..m.nrows() {
            m[(i, i)] += self.q;
        }
        c.axpy(-self.q, &self.x_k, 1.0);
        Some((m, c))
    }

    fn affine_form_unregularized(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let n = self.dim();
        let (mut m, mut c) = match self.mode {
            FhatMode::Constant => (DMatrix::zeros(n, n), self.z_m_k.clone()),
            FhatMode::FirstOrder => {
                let j = self.jac.clone().unwrap();
                let c = &self.z_m_k - &j * &self.x_k;
                (j, c)
            }
            FhatMode::Exact => {
                let (a, b) = self.problem.operator.affine_form()?;
                (a.clone(), b.clone())
            }
        };
        c += &self.fixed_part;
        if self.free_weights.iter().any(|w| *w != 0.0) {
            // ∇_y g(y, x^k) w = ∇_y g(x^k, x^k) w + H (y - x^k) for quadratic g.
            if self.problem.coupled.curvature() != Curvature::Quadratic {
                return None;
            }
            let h = self.problem.coupled.hessian_y_weighted(&self.x_k, &self.x_k, &self.free_weights)?;
            c += self.problem.coupled.grad_y_times(&self.x_k, &self.x_k, &self.free_weights) - &h * &self.x_k;
            m += h;
        }
        Some((m, c))
    }

    /// Lower estimate of the strong-monotonicity modulus of `F^k` without the
    /// proximal term. Exact for affine `F^k`; otherwise the smallest symmetric
    /// Jacobian eigenvalue over a few sampled points (a heuristic).
    /// With `jacobi`, only the diagonal blocks count.
    pub fn modulus_estimate(&self, blocks: Option<&[Range<usize>]>, seed: u64) -> f64 {
        let min_eig = |m: &DMatrix<f64>| match blocks {
            Some(bs) => bs.iter().map(|r| sym_min_eigenvalue(&sub_block(m, r.clone()))).fold(f64::INFINITY, f64::min),
            None => sym_min_eigenvalue(m),
        };
        if let Some((m, _)) = self.affine_form_unregularized() {
            return min_eig(&m);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.1 * (1.0 + self.x_k.amax());
        let n = self.dim();
        let mut est = f64::INFINITY;
        for s in 0..5 {
            let z = if s == 0 {
                self.x_k.clone()
            } else {
                DVector::from_fn(n, |i, _| self.x_k[i] + scale * rng.gen_range(-1.0..1.0))
            };
            let jac = fd_jacobian(|y| self.fhat_at(y) + self.gamma_mu(y), &z, n);
            est = est.min(min_eig(&jac));
        }
        est
    }

    /// `q = max(0, c_target - ĉ)`.
    pub fn auto_regularization(&self, c_target: f64, blocks: Option<&[Range<usize>]>, seed: u64) -> f64 {
        let est = self.modulus_estimate(blocks, seed);
        if est.is_finite() {
            (c_target - est).max(0.0)
        } else {
            c_target
        }
    }

    /// The whole-space VI instance.
    pub fn instance(&self) -> Result<ViInstance<'_>> {
        let op = match self.affine_form() {
            Some((m, c)) => ViOperator::affine(m, c),
            None => ViOperator::general(self.dim(), move |y| self.eval(y)),
        };
        ViInstance::new(op, self.problem.easy_set.clone())
    }

    /// One VI per block, with the other blocks frozen at `x^k`.
    pub fn jacobi_split(&self, blocks: &[Range<usize>]) -> Result<Vec<ViInstance<'_>>> {
        let affine = self.affine_form();
        let zeta = self.zeta();
        blocks
            .iter()
            .map(|r| {
                let set = self.problem.easy_set.restrict(r.clone())?;
                let op = match &affine {
                    Some((m, _)) => {
                        let mrr = sub_block(m, r.clone());
                        let off = zeta.rows(r.start, r.len()) - &mrr * self.x_k.rows(r.start, r.len());
                        ViOperator::affine(mrr, off)
                    }
                    None => {
                        let r = r.clone();
                        ViOperator::general(r.len(), move |ya: &DVector<f64>| {
                            let mut z = self.x_k.clone();
                            z.rows_mut(r.start, r.len()).copy_from(ya);
                            self.eval(&z).rows(r.start, r.len()).into_owned()
                        })
                    }
                };
                ViInstance::new(op, set)
            })
            .collect()
    }

    /// The Jacobi operator `𝓕^k(y) = (F^k_a(y_a, x^k_{-a}))_a`.
    pub fn jacobi_eval(&self, y: &DVector<f64>, blocks: &[Range<usize>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for r in blocks {
            let mut z = self.x_k.clone();
            z.rows_mut(r.start, r.len()).copy_from(&y.rows(r.start, r.len()));
            out.rows_mut(r.start, r.len()).copy_from(&self.eval(&z).rows(r.start, r.len()));
        }
        out
    }
}
