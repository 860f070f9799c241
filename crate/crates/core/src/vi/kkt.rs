//! Complementarity reformulation of `0 ∈ s(v) + N_S(x)` over a canonical
//! product set `S`, where `x = v[..n]`.
//!
//! Per block, with `s` the stationarity vector:
//! - all-space: `s_j = 0`
//! - orthant: `x_j ≥ 0 ⊥ s_j ≥ 0`
//! - box: `s_j - wl_j + wu_j = 0`, `x_j - l_j ≥ 0 ⊥ wl_j ≥ 0`, `u_j - x_j ≥ 0 ⊥ wu_j ≥ 0`
//! - simplex: `x_j ≥ 0 ⊥ s_j + τ ≥ 0`, `Σ x = 1`
//! - ball ∩ orthant: `x_j ≥ 0 ⊥ s_j + 2ρ x_j ≥ 0`, `ρ ≥ 0 ⊥ r² - |x|² ≥ 0`

use nalgebra::{DMatrix, DVector};

use crate::semismooth::Row;
use crate::sets::{ConvexSet, ProductSet};

/// Number of multipliers the set adds to the system.
fn extras(set: &ConvexSet) -> usize {
    match set {
        ConvexSet::AllSpace { .. } | ConvexSet::NonnegOrthant { .. } => 0,
        ConvexSet::Box { lower, .. } => 2 * lower.len(),
        ConvexSet::Simplex { .. } | ConvexSet::BallNonneg { .. } => 1,
    }
}

/// Row/variable bookkeeping for one product set. Coordinate rows come first
/// (`0..n`), then the set rows; set multipliers live at
/// `v[extra_offset..extra_offset + extra_count()]`.
pub(crate) struct SetKkt<'a> {
    set: &'a ProductSet,
    extra_offset: usize,
    extra_starts: Vec<usize>,
    extra_count: usize,
}

impl<'a> SetKkt<'a> {
    pub fn new(set: &'a ProductSet, extra_offset: usize) -> Self {
        let mut extra_starts = Vec::with_capacity(set.blocks().len());
        let mut count = 0;
        for b in set.blocks() {
            extra_starts.push(count);
            count += extras(b);
        }
        Self { set, extra_offset, extra_starts, extra_count: count }
    }

    pub fn n(&self) -> usize {
        self.set.dim()
    }

    pub fn extra_count(&self) -> usize {
        self.extra_count
    }

    pub fn row_count(&self) -> usize {
        self.n() + self.extra_count
    }

    pub fn rows(&self) -> Vec<Row> {
        let mut rows = Vec::with_capacity(self.row_count());
        for set in self.set.blocks() {
            let d = set.dim();
            let r = match set {
                ConvexSet::AllSpace { .. } | ConvexSet::Box { .. } => Row::Equation,
                _ => Row::Complementarity,
            };
            rows.extend(std::iter::repeat(r).take(d));
        }
        for set in self.set.blocks() {
            match set {
                ConvexSet::Box { lower, upper } => {
                    for l in lower {
                        rows.push(if l.is_finite() { Row::Complementarity } else { Row::Equation });
                    }
                    for u in upper {
                        rows.push(if u.is_finite() { Row::Complementarity } else { Row::Equation });
                    }
                }
                ConvexSet::Simplex { .. } => rows.push(Row::Equation),
                ConvexSet::BallNonneg { .. } => rows.push(Row::Complementarity),
                _ => {}
            }
        }
        rows
    }

    /// Reasonable starting multipliers for a given stationarity vector.
    pub fn initial_extras(&self, s: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.extra_count);
        for (bi, (r, set)) in self.set.ranges().enumerate() {
            let e = self.extra_starts[bi];
            match set {
                ConvexSet::Simplex { .. } => {
                    out[e] = -s.rows(r.start, r.len()).min();
                }
                ConvexSet::Box { lower, .. } => {
                    for (j, idx) in r.clone().enumerate() {
                        out[e + j] = s[idx].max(0.0);
                        out[e + lower.len() + j] = (-s[idx]).max(0.0);
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Writes the row values given the current variables and stationarity.
    pub fn fill_values(&self, v: &DVector<f64>, s: &DVector<f64>, a: &mut DVector<f64>, b: &mut DVector<f64>) {
        let n = self.n();
        for (bi, (r, set)) in self.set.ranges().enumerate() {
            let e = self.extra_offset + self.extra_starts[bi];
            let er = n + self.extra_starts[bi];
            match set {
                ConvexSet::AllSpace { .. } => {
                    for j in r {
                        a[j] = s[j];
                    }
                }
                ConvexSet::NonnegOrthant { .. } => {
                    for j in r {
                        a[j] = v[j];
                        b[j] = s[j];
                    }
                }
                ConvexSet::Box { lower, upper } => {
                    let d = lower.len();
                    for (k, j) in r.enumerate() {
                        let (wl, wu) = (v[e + k], v[e + d + k]);
                        a[j] = s[j] - wl + wu;
                        if lower[k].is_finite() {
                            a[er + k] = v[j] - lower[k];
                            b[er + k] = wl;
                        } else {
                            a[er + k] = wl;
                        }
                        if upper[k].is_finite() {
                            a[er + d + k] = upper[k] - v[j];
                            b[er + d + k] = wu;
                        } else {
                            a[er + d + k] = wu;
                        }
                    }
                }
                ConvexSet::Simplex { .. } => {
                    let tau = v[e];
                    let mut sum = 0.0;
                    for j in r {
                        a[j] = v[j];
                        b[j] = s[j] + tau;
                        sum += v[j];
                    }
                    a[er] = sum - 1.0;
                }
                ConvexSet::BallNonneg { radius_sq, .. } => {
                    let rho = v[e];
                    let mut nsq = 0.0;
                    for j in r {
                        a[j] = v[j];
                        b[j] = s[j] + 2.0 * rho * v[j];
                        nsq += v[j] * v[j];
                    }
                    a[er] = rho;
                    b[er] = radius_sq - nsq;
                }
            }
        }
    }

    /// Writes the row Jacobians given `ds = ∂s/∂v` (an `n x len(v)` matrix).
    pub fn fill_jacobians(&self, v: &DVector<f64>, ds: &DMatrix<f64>, ja: &mut DMatrix<f64>, jb: &mut DMatrix<f64>) {
        let n = self.n();
        for (bi, (r, set)) in self.set.ranges().enumerate() {
            let e = self.extra_offset + self.extra_starts[bi];
            let er = n + self.extra_starts[bi];
            match set {
                ConvexSet::AllSpace { .. } => {
                    for j in r {
                        ja.row_mut(j).copy_from(&ds.row(j));
                    }
                }
                ConvexSet::NonnegOrthant { .. } => {
                    for j in r {
                        ja[(j, j)] = 1.0;
                        jb.row_mut(j).copy_from(&ds.row(j));
                    }
                }
                ConvexSet::Box { lower, upper } => {
                    let d = lower.len();
                    for (k, j) in r.enumerate() {
                        ja.row_mut(j).copy_from(&ds.row(j));
                        ja[(j, e + k)] -= 1.0;
                        ja[(j, e + d + k)] += 1.0;
                        if lower[k].is_finite() {
                            ja[(er + k, j)] = 1.0;
                            jb[(er + k, e + k)] = 1.0;
                        } else {
                            ja[(er + k, e + k)] = 1.0;
                        }
                        if upper[k].is_finite() {
                            ja[(er + d + k, j)] = -1.0;
                            jb[(er + d + k, e + d + k)] = 1.0;
                        } else {
                            ja[(er + d + k, e + d + k)] = 1.0;
                        }
                    }
                }
                ConvexSet::Simplex { .. } => {
                    for j in r {
                        ja[(j, j)] = 1.0;
                        jb.row_mut(j).copy_from(&ds.row(j));
                        jb[(j, e)] += 1.0;
                        ja[(er, j)] = 1.0;
                    }
                }
                ConvexSet::BallNonneg { .. } => {
                    let rho = v[e];
                    for j in r {
                        ja[(j, j)] = 1.0;
                        jb.row_mut(j).copy_from(&ds.row(j));
                        jb[(j, j)] += 2.0 * rho;
                        jb[(j, e)] += 2.0 * v[j];
                        jb[(er, j)] = -2.0 * v[j];
                    }
                    ja[(er, e)] = 1.0;
                }
            }
        }
    }
}
