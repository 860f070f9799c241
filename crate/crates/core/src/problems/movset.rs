//! Moving-set QVIs: `F(x) = A x + b` over the ellipsoid
//! `K(x) = {y : (y - Bx)ᵀR(y - Bx) <= d}` whose center follows `x`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::io::{CoupledFile, GeneratorSpec};
use crate::model::{AffineOperator, CoupledConstraints, Curvature, QviProblem};
use crate::sets::{ConvexSet, ProductSet};

/// Default `|B|₂`. The fixed-point map of the subproblem contracts at about
/// this rate, so it sets the outer iteration count; 0.1 gives counts around 7
/// at `ω = 0`.
pub const DEFAULT_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MovSetData {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub r: DMatrix<f64>,
    pub b_mat: DMatrix<f64>,
    pub d: f64,
    pub spectral_margin: Option<f64>,
    pub seed: Option<u64>,
}

impl MovSetData {
    /// Random instance.
    ///
    /// `A = A₀/|A₀|₂` with `A₀ = SᵀS/n + I/2` for `S ~ U[-1,1]^{n×n}`, and `R`
    /// the same way from a fresh `S`; `B = margin·Q` with `Q` the orthogonal
    /// factor of a `U[-1,1]` matrix, so `|B|₂ = margin < 1`; `b ~ U[-1,1]^n`.
    /// Draw order: `S_A`, `S_R`, the matrix behind `Q`, then `b`.
    pub fn random(n: usize, seed: u64, spectral_margin: f64, d: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("moving-set instance needs n >= 1".into()));
        }
        if !(spectral_margin > 0.0 && spectral_margin < 1.0) {
            return Err(Error::InvalidInput("spectral margin must lie in (0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = |rng: &mut ChaCha8Rng| DMatrix::from_row_iterator(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)));
        let spd = |s: DMatrix<f64>| {
            let m = (s.transpose() * &s) / n as f64 + DMatrix::identity(n, n) * 0.5;
            let m = (&m + m.transpose()) * 0.5;
            let top = SymmetricEigen::new(m.clone()).eigenvalues.max();
            m / top
        };
        let a = spd(uniform(&mut rng));
        let r = spd(uniform(&mut rng));
        let q = uniform(&mut rng).qr().q();
        let b_mat = q * spectral_margin;
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut data = Self::new(a, b, r, b_mat, d)?;
        data.spectral_margin = Some(spectral_margin);
        data.seed = Some(seed);
        Ok(data)
    }

    /// Explicit instance, bypassing the generator.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, r: DMatrix<f64>, b_mat: DMatrix<f64>, d: f64) -> Result<Self> {
        let n = b.len();
        if n == 0 {
            return Err(Error::InvalidInput("moving-set instance needs n >= 1".into()));
        }
        for m in [&a, &r, &b_mat] {
            check_dim(n, m.nrows())?;
            check_dim(n, m.ncols())?;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidInput("moving-set radius d must be positive".into()));
        }
        if ((&a + a.transpose()) * 0.5).cholesky().is_none() {
            return Err(Error::InvalidInput("A must be positive definite".into()));
        }
        if (&r - r.transpose()).amax() > 1e-12 * r.amax().max(1.0) || r.clone().cholesky().is_none() {
            return Err(Error::InvalidInput("R must be symmetric positive definite".into()));
        }
        Ok(Self { a, b, r, b_mat, d, spectral_margin: None, seed: None })
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn problem(&self) -> Result<QviProblem> {
        let n = self.n();
        let op = AffineOperator::new(self.a.clone(), self.b.clone())?;
        let con = MovingSetConstraint::new(self.r.clone(), self.b_mat.clone(), self.d)?;
        let mut p = QviProblem::new(
            format!("movset_n{n}"),
            Arc::new(op),
            Arc::new(con),
            ProductSet::single(ConvexSet::AllSpace { dim: n })?,
            None,
        )?
        .with_metadata("family", "movset")
        .with_metadata("n", n)
        .with_metadata("d", self.d)
        .with_initial_point(movset_initial_point(n))?;
        if let Some(seed) = self.seed {
            p = p.with_metadata("seed", seed);
        }
        if let Some(margin) = self.spectral_margin {
            p = p.with_metadata("spectral_margin", margin);
        }
        Ok(p)
    }

    pub fn spec(&self) -> Option<GeneratorSpec> {
        match (self.seed, self.spectral_margin) {
            (Some(seed), Some(margin)) => {
                Some(GeneratorSpec::Movset { n: self.n(), seed, spectral_margin: margin, d: self.d })
            }
            _ => None,
        }
    }
}

pub fn gen_movset(n: usize, seed: u64, spectral_margin: f64, d: f64) -> Result<QviProblem> {
    MovSetData::random(n, seed, spectral_margin, d)?.problem()
}

/// The origin, feasible because `g(0, 0) = -d < 0`.
pub fn movset_initial_point(n: usize) -> DVector<f64> {
    DVector::zeros(n)
}

/// `g(y, x) = (y - Bx)ᵀR(y - Bx) - d`.
#[derive(Debug, Clone)]
pub struct MovingSetConstraint {
    r: DMatrix<f64>,
    b: DMatrix<f64>,
    d: f64,
}

impl MovingSetConstraint {
    pub fn new(r: DMatrix<f64>, b: DMatrix<f64>, d: f64) -> Result<Self> {
        check_dim(r.nrows(), r.ncols())?;
        check_dim(r.nrows(), b.nrows())?;
        check_dim(r.nrows(), b.ncols())?;
        Ok(Self { r, b, d })
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn d(&self) -> f64 {
        self.d
    }
}

impl CoupledConstraints for MovingSetConstraint {
    fn dim(&self) -> usize {
        self.r.nrows()
    }

    fn count(&self) -> usize {
        1
    }

    fn eval(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let u = y - &self.b * x;
        DVector::from_element(1, u.dot(&(&self.r * &u)) - self.d)
    }

    fn grad_y(&self, y: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let u = y - &self.b * x;
        let g = (&self.r * u) * 2.0;
        DMatrix::from_column_slice(g.len(), 1, g.as_slice())
    }

    fn grad_y_times(&self, y: &DVector<f64>, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let u = y - &self.b * x;
        (&self.r * u) * (2.0 * w[0])
    }

    fn curvature(&self) -> Curvature {
        Curvature::Quadratic
    }

    fn hessian_y_weighted(&self, _y: &DVector<f64>, _x: &DVector<f64>, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(&self.r * (2.0 * w[0]))
    }

    fn diagonal_jacobians(&self, z: &DVector<f64>, w: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let shift = DMatrix::identity(self.dim(), self.dim()) - &self.b;
        let ru = &self.r * (&shift * z);
        let dg = DMatrix::from_row_slice(1, z.len(), (shift.tr_mul(&ru) * 2.0).as_slice());
        Some((dg, &self.r * &shift * (2.0 * w[0])))
    }

    fn describe(&self) -> Option<CoupledFile> {
        Some(CoupledFile::MovingSet { r: self.r.clone(), b: self.b.clone(), d: self.d })
    }
}
