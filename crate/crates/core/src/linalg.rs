//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Central-difference Jacobian of `f` at `x`, one column per coordinate.
pub(crate) fn fd_jacobian<F>(f: F, x: &DVector<f64>, rows: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(rows, n);
    let mut probe = x.clone();
    for j in 0..n {
        let h = 1e-6 * (1.0 + x[j].abs());
        probe[j] = x[j] + h;
        let fp = f(&probe);
        probe[j] = x[j] - h;
        let fm = f(&probe);
        probe[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Smallest eigenvalue of the symmetric part `(M + M^T) / 2`.
pub(crate) fn sym_min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub(crate) fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= rel_tol * scale
}

pub(crate) fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Principal submatrix on a contiguous index range.
pub(crate) fn sub_block(m: &DMatrix<f64>, r: std::ops::Range<usize>) -> DMatrix<f64> {
    m.view((r.start, r.start), (r.len(), r.len())).into_owned()
}

/// Column-wise view of a list of vectors as an `n x k` matrix.
pub(crate) fn hstack(cols: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_jacobian_of_quadratic_is_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, -1.0, 3.0]);
        let f = |x: &DVector<f64>| &a * x + DVector::from_element(2, x.dot(x));
        let x = DVector::from_vec(vec![0.5, -2.0]);
        let j = fd_jacobian(f, &x, 2);
        let expected = &a + DMatrix::from_row_slice(2, 2, &[1.0, -4.0, 1.0, -4.0]);
        assert!((j - expected).amax() < 1e-8);
    }

    #[test]
    fn sym_min_eig_ignores_skew_part() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 5.0, -5.0, 2.0]);
        assert!((sym_min_eigenvalue(&m) - 1.0).abs() < 1e-12);
    }
}
