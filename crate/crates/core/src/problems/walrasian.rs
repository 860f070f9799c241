//! Walrasian exchange economy with one firm, written as a GNEP.
//!
//! Variables are laid out as `x = [x^1, …, x^C, x_f, p]`, each of length `G`.
//! Consumer `i` maximizes the concave quadratic utility
//! `b^iᵀx^i - ½ x^iᵀR^i x^i` subject to the budget `pᵀ(x^i - E^i) <= 0`, the firm
//! maximizes `pᵀx_f` over `{x_f >= 0, |x_f|² <= M}`, and the market picks prices
//! on the unit simplex to clear excess demand.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::io::{CoupledFile, GeneratorSpec};
use crate::model::{AffineOperator, CoupledConstraints, Curvature, QviProblem};
use crate::sets::{ConvexSet, ProductSet};

/// Data of one Walrasian instance.
#[derive(Debug, Clone, PartialEq)]
pub struct WalrasianData {
    pub consumers: usize,
    pub goods: usize,
    /// Utility Hessians `R^i` (symmetric PSD).
    pub r: Vec<DMatrix<f64>>,
    /// Linear utility terms `b^i`.
    pub b: Vec<DVector<f64>>,
    /// Endowments `E^i`.
    pub e: Vec<DVector<f64>>,
    /// Firm capacity `M` (squared radius of the production ball).
    pub capacity: f64,
    pub seed: Option<u64>,
}

impl WalrasianData {
    /// Default capacity `10·C·G`.
    pub fn default_capacity(consumers: usize, goods: usize) -> f64 {
        10.0 * (consumers * goods) as f64
    }

    /// Random instance. Per consumer the stream draws `b ~ U[0,10]^G`, then
    /// `A ~ U[-1,1]^{G×G}` row by row, then `E ~ U[0,10]^G`; `R = 10·AᵀA / max|AᵀA|`,
    /// so the largest entry of `R` is exactly 10 whatever `G` is.
    pub fn random(consumers: usize, goods: usize, capacity: Option<f64>, seed: u64) -> Result<Self> {
        if consumers == 0 || goods == 0 {
            return Err(Error::InvalidInput("Walrasian instance needs C >= 1 and G >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = Vec::with_capacity(consumers);
        let mut b = Vec::with_capacity(consumers);
        let mut e = Vec::with_capacity(consumers);
        for _ in 0..consumers {
            b.push(DVector::from_fn(goods, |_, _| rng.gen_range(0.0..10.0)));
            let a = DMatrix::from_row_iterator(goods, goods, (0..goods * goods).map(|_| rng.gen_range(-1.0..1.0)));
            let gram = a.transpose() * &a;
            let norm = gram.amax();
            r.push(if norm > 0.0 { gram * (10.0 / norm) } else { gram });
            e.push(DVector::from_fn(goods, |_, _| rng.gen_range(0.0..10.0)));
        }
        let capacity = capacity.unwrap_or_else(|| Self::default_capacity(consumers, goods));
        let mut data = Self::new(r, b, e, capacity)?;
        data.seed = Some(seed);
        Ok(data)
    }

    /// Explicit instance, bypassing the generator.
    pub fn new(r: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>, e: Vec<DVector<f64>>, capacity: f64) -> Result<Self> {
        let consumers = r.len();
        if consumers == 0 {
            return Err(Error::InvalidInput("Walrasian instance needs at least one consumer".into()));
        }
        let goods = r[0].nrows();
        if goods == 0 {
            return Err(Error::InvalidInput("Walrasian instance needs at least one good".into()));
        }
        check_dim(consumers, b.len())?;
        check_dim(consumers, e.len())?;
        for i in 0..consumers {
            check_dim(goods, r[i].nrows())?;
            check_dim(goods, r[i].ncols())?;
            check_dim(goods, b[i].len())?;
            check_dim(goods, e[i].len())?;
            if e[i].iter().any(|v| *v < 0.0) {
                return Err(Error::InvalidInput("endowments must be nonnegative".into()));
            }
        }
        if !(capacity > 0.0) || !capacity.is_finite() {
            return Err(Error::InvalidInput("firm capacity must be positive".into()));
        }
        Ok(Self { consumers, goods, r, b, e, capacity, seed: None })
    }

    pub fn n(&self) -> usize {
        (self.consumers + 2) * self.goods
    }

    /// `(A, b)` of the affine operator.
    pub fn operator_parts(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (c, g) = (self.consumers, self.goods);
        let n = self.n();
        let firm = c * g;
        let price = (c + 1) * g;
        let mut a = DMatrix::zeros(n, n);
        let mut off = DVector::zeros(n);
        for i in 0..c {
            a.view_mut((i * g, i * g), (g, g)).copy_from(&self.r[i]);
            off.rows_mut(i * g, g).copy_from(&(-&self.b[i]));
        }
        for j in 0..g {
            a[(firm + j, price + j)] = -1.0;
            a[(price + j, firm + j)] = 1.0;
            for i in 0..c {
                a[(price + j, i * g + j)] = -1.0;
                off[price + j] += self.e[i][j];
            }
        }
        (a, off)
    }

    pub fn easy_set(&self) -> ProductSet {
        let g = self.goods;
        let mut blocks = vec![ConvexSet::NonnegOrthant { dim: g }; self.consumers];
        blocks.push(ConvexSet::BallNonneg { dim: g, radius_sq: self.capacity });
        blocks.push(ConvexSet::Simplex { dim: g });
        ProductSet::new(blocks).expect("valid Walrasian sets")
    }

    /// Consumer blocks, then one block holding firm and prices.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.goods; self.consumers];
        sizes.push(2 * self.goods);
        sizes
    }

    pub fn problem(&self) -> Result<QviProblem> {
        let (a, off) = self.operator_parts();
        let op = AffineOperator::new(a, off)?;
        let con = BudgetConstraints::new(self.goods, self.e.clone())?;
        let name = format!("walras_c{}_g{}", self.consumers, self.goods);
        let mut p = QviProblem::new(name, Arc::new(op), Arc::new(con), self.easy_set(), Some(&self.block_sizes()))?
            .with_metadata("family", "walras")
            .with_metadata("consumers", self.consumers)
            .with_metadata("goods", self.goods)
            .with_metadata("capacity", self.capacity)
            .with_initial_point(walras_initial_point(self.consumers, self.goods))?;
        if let Some(seed) = self.seed {
            p = p.with_metadata("seed", seed);
        }
        Ok(p)
    }

    pub fn spec(&self) -> Option<GeneratorSpec> {
        self.seed.map(|seed| GeneratorSpec::Walras {
            consumers: self.consumers,
            goods: self.goods,
            capacity: Some(self.capacity),
            seed,
        })
    }
}

/// Seeded Walrasian instance; `capacity = None` uses `10·C·G`.
pub fn gen_walrasian(consumers: usize, goods: usize, capacity: Option<f64>, seed: u64) -> Result<QviProblem> {
    WalrasianData::random(consumers, goods, capacity, seed)?.problem()
}

/// Prices `1/G`, everything else zero.
pub fn walras_initial_point(consumers: usize, goods: usize) -> DVector<f64> {
    let n = (consumers + 2) * goods;
    DVector::from_fn(n, |i, _| if i >= (consumers + 1) * goods { 1.0 / goods as f64 } else { 0.0 })
}

/// Budget constraints `g_i(y, x) = Σ_j p^x_j (y^i_j - E^i_j)`, one per consumer.
#[derive(Debug, Clone)]
pub struct BudgetConstraints {
    goods: usize,
    endowments: Vec<DVector<f64>>,
}

impl BudgetConstraints {
    pub fn new(goods: usize, endowments: Vec<DVector<f64>>) -> Result<Self> {
        if goods == 0 || endowments.is_empty() {
            return Err(Error::InvalidInput("budget constraints need goods and consumers".into()));
        }
        for e in &endowments {
            check_dim(goods, e.len())?;
        }
        Ok(Self { goods, endowments })
    }

    pub fn goods(&self) -> usize {
        self.goods
    }

    pub fn endowments(&self) -> &[DVector<f64>] {
        &self.endowments
    }

    fn consumers(&self) -> usize {
        self.endowments.len()
    }

    fn prices<'a>(&self, x: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        x.rows((self.consumers() + 1) * self.goods, self.goods)
    }
}

impl CoupledConstraints for BudgetConstraints {
    fn dim(&self) -> usize {
        (self.consumers() + 2) * self.goods
    }

    fn count(&self) -> usize {
        self.consumers()
    }

    fn eval(&self, y: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let g = self.goods;
        let p = self.prices(x);
        DVector::from_fn(self.consumers(), |i, _| {
            (0..g).map(|j| p[j] * (y[i * g + j] - self.endowments[i][j])).sum()
        })
    }

    fn grad_y(&self, _y: &DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
        let g = self.goods;
        let p = self.prices(x);
        let mut out = DMatrix::zeros(self.dim(), self.consumers());
        for i in 0..self.consumers() {
            out.view_mut((i * g, i), (g, 1)).copy_from(&p);
        }
        out
    }

    fn grad_y_times(&self, _y: &DVector<f64>, x: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let g = self.goods;
        let p = self.prices(x);
        let mut out = DVector::zeros(self.dim());
        for i in 0..self.consumers() {
            out.rows_mut(i * g, g).axpy(w[i], &p, 0.0);
        }
        out
    }

    fn curvature(&self) -> Curvature {
        Curvature::Linear
    }

    fn diagonal_jacobians(&self, z: &DVector<f64>, w: &DVector<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let (g, n) = (self.goods, self.dim());
        let price = (self.consumers() + 1) * g;
        let p = self.prices(z);
        let mut dg = DMatrix::zeros(self.consumers(), n);
        let mut dgw = DMatrix::zeros(n, n);
        for i in 0..self.consumers() {
            for j in 0..g {
                dg[(i, i * g + j)] = p[j];
                dg[(i, price + j)] = z[i * g + j] - self.endowments[i][j];
                dgw[(i * g + j, price + j)] = w[i];
            }
        }
        Some((dg, dgw))
    }

    fn describe(&self) -> Option<CoupledFile> {
        Some(CoupledFile::Budget { goods: self.goods, endowments: self.endowments.iter().map(|e| e.as_slice().to_vec()).collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{qvi_kkt_residual, validate};

    fn closed_form() -> WalrasianData {
        WalrasianData::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            vec![DVector::from_element(1, 2.0)],
            vec![DVector::from_element(1, 3.0)],
            4.0,
        )
        .unwrap()
    }

    #[test]
    fn closed_form_equilibrium_has_zero_residual() {
        let p = closed_form().problem().unwrap();
        let x = DVector::from_vec(vec![2.0, 2.0, 1.0]);
        assert_eq!(qvi_kkt_residual(&p, &x, &DVector::zeros(1)).unwrap(), 0.0);
    }

    #[test]
    fn initial_point_layout_and_feasibility() {
        let y = walras_initial_point(1, 2);
        assert_eq!(y.as_slice(), &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5]);
        let data = WalrasianData::random(3, 4, None, 9).unwrap();
        let p = data.problem().unwrap();
        let y1 = p.initial_point.clone().unwrap();
        assert!(p.is_feasible(&y1, 0.0).unwrap());
        let g = p.coupled.eval(&y1, &y1);
        for i in 0..3 {
            assert!((g[i] + 0.25 * data.e[i].sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_is_deterministic_and_scaled() {
        let a = WalrasianData::random(4, 5, None, 17).unwrap();
        let b = WalrasianData::random(4, 5, None, 17).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, WalrasianData::random(4, 5, None, 18).unwrap());
        for r in &a.r {
            assert!((r.amax() - 10.0).abs() < 1e-12);
            assert!((r - r.transpose()).amax() == 0.0);
            assert!(r.clone().symmetric_eigen().eigenvalues.min() >= -1e-10);
        }
        assert!(a.b.iter().chain(a.e.iter()).all(|v| v.iter().all(|x| (0.0..10.0).contains(x))));
        assert_eq!(a.capacity, 200.0);
    }

    #[test]
    fn dimensions_and_blocks() {
        let p = gen_walrasian(20, 20, None, 0).unwrap();
        assert_eq!(p.n(), 440);
        assert_eq!(p.m(), 20);
        assert_eq!(p.block_sizes().len(), 21);
        assert_eq!(*p.block_sizes().last().unwrap(), 40);
    }

    #[test]
    fn validation_passes() {
        let p = gen_walrasian(2, 2, None, 1).unwrap();
        let report = validate(&p, 10, 1);
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn budget_gradient_helpers_agree() {
        let p = gen_walrasian(3, 2, None, 5).unwrap();
        let x = DVector::from_fn(p.n(), |i, _| 0.1 * i as f64);
        let w = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let direct = p.coupled.grad_y(&x, &x) * &w;
        assert!((p.coupled.grad_y_times(&x, &x, &w) - direct).amax() < 1e-15);
    }
}
