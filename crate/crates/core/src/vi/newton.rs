use nalgebra::{DMatrix, DVector};

use super::kkt::SetKkt;
use super::{ViInstance, ViMethod, ViResult};
use crate::error::{check_dim, Error, Result};
use crate::semismooth::{self, MixedComplementarity, NewtonOptions, Row};

struct AffineSystem<'a> {
    kkt: SetKkt<'a>,
    rows: Vec<Row>,
    matrix: &'a DMatrix<f64>,
    offset: &'a DVector<f64>,
}

impl AffineSystem<'_> {
    fn stationarity(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.kkt.n();
        self.matrix * v.rows(0, n) + self.offset
    }
}

impl MixedComplementarity for AffineSystem<'_> {
    fn rows(&self) -> &[Row] {
        &self.rows
    }

    fn values(&self, v: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let s = self.stationarity(v);
        let len = self.kkt.row_count();
        let mut a = DVector::zeros(len);
        let mut b = DVector::zeros(len);
        self.kkt.fill_values(v, &s, &mut a, &mut b);
        Ok((a, b))
    }

    fn jacobians(&self, v: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.kkt.n();
        let len = self.kkt.row_count();
        let mut ds = DMatrix::zeros(n, len);
        ds.view_mut((0, 0), (n, n)).copy_from(self.matrix);
        let mut ja = DMatrix::zeros(len, len);
        let mut jb = DMatrix::zeros(len, len);
        self.kkt.fill_jacobians(v, &ds, &mut ja, &mut jb);
        Ok((ja, jb))
    }
}

/// Semismooth Newton for an affine VI over any canonical product set.
///
/// The VI is rewritten as a mixed complementarity system in `y` and the set
/// multipliers and solved with Fischer–Burmeister Newton steps. The returned
/// point is projected onto the set, so it is always feasible.
pub fn solve_affine_newton(inst: &ViInstance<'_>, y0: &DVector<f64>, tol: f64, max_iter: usize) -> Result<ViResult> {
    check_dim(inst.dim(), y0.len())?;
    let (matrix, offset) = inst
        .op
        .affine_form()
        .ok_or_else(|| Error::InvalidInput("Newton route needs an affine operator".into()))?;
    let kkt = SetKkt::new(&inst.set, inst.dim());
    let rows = kkt.rows();
    let sys = AffineSystem { kkt, rows, matrix, offset };

    let n = inst.dim();
    let mut y = y0.clone();
    inst.set.project_in_place(y.as_mut_slice());
    let s = matrix * &y + offset;
    let extras = sys.kkt.initial_extras(&s);
    let mut v0 = DVector::zeros(n + extras.len());
    v0.rows_mut(0, n).copy_from(&y);
    v0.rows_mut(n, extras.len()).copy_from(&extras);

    let opts = NewtonOptions::new((tol * 1e-2).max(1e-15), max_iter);
    let out = semismooth::solve(&sys, v0, opts)?;
    let mut y = out.v.rows(0, n).into_owned();
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("Newton iterate"));
    }
    inst.set.project_in_place(y.as_mut_slice());
    Ok(ViResult::finish(inst, y, out.iterations, tol, ViMethod::Newton))
}
