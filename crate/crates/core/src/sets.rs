//! Canonical convex sets with exact Euclidean projections.
//!
//! Every easy set `K_h` handled by the solvers is a Cartesian product of the
//! descriptors below. Projections are closed form, so the VI solvers never
//! need an inner feasibility loop.

use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A nonempty closed convex set with a closed-form projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConvexSet {
    AllSpace { dim: usize },
    NonnegOrthant { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Unit simplex `{y >= 0, sum(y) = 1}`.
    Simplex { dim: usize },
    /// `{y >= 0, |y|^2 <= radius_sq}`.
    BallNonneg { dim: usize, radius_sq: f64 },
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::AllSpace { dim }
            | ConvexSet::NonnegOrthant { dim }
            | ConvexSet::Simplex { dim }
            | ConvexSet::BallNonneg { dim, .. } => *dim,
            ConvexSet::Box { lower, .. } => lower.len(),
        }
    }

    /// Checks the descriptor invariants (positive dimension, ordered box
    /// bounds, positive radius).
    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidInput("set dimension must be positive".into()));
        }
        match self {
            ConvexSet::Box { lower, upper } => {
                check_dim(lower.len(), upper.len())?;
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return Err(Error::InvalidInput("box requires lower <= upper".into()));
                }
            }
            ConvexSet::BallNonneg { radius_sq, .. } => {
                if !(*radius_sq > 0.0) || !radius_sq.is_finite() {
                    return Err(Error::InvalidInput("ball radius_sq must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Euclidean projection of `v` onto the set.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        let mut out = v.clone();
        self.project_in_place(out.as_mut_slice());
        Ok(out)
    }

    /// Projects the slice in place. The caller guarantees the length.
    pub(crate) fn project_in_place(&self, v: &mut [f64]) {
        match self {
            ConvexSet::AllSpace { .. } => {}
            ConvexSet::NonnegOrthant { .. } => v.iter_mut().for_each(|x| *x = x.max(0.0)),
            ConvexSet::Box { lower, upper } => {
                for ((x, l), u) in v.iter_mut().zip(lower).zip(upper) {
                    *x = x.clamp(*l, *u);
                }
            }
            ConvexSet::Simplex { .. } => project_simplex(v),
            ConvexSet::BallNonneg { radius_sq, .. } => {
                v.iter_mut().for_each(|x| *x = x.max(0.0));
                let norm_sq: f64 = v.iter().map(|x| x * x).sum();
                if norm_sq > *radius_sq {
                    let scale = (radius_sq / norm_sq).sqrt();
                    v.iter_mut().for_each(|x| *x *= scale);
                }
            }
        }
    }

    /// True iff every defining constraint holds within `tol`.
    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim(self.dim(), v.len())?;
        Ok(self.contains_slice(v.as_slice(), tol))
    }

    pub(crate) fn contains_slice(&self, v: &[f64], tol: f64) -> bool {
        let nonneg = |v: &[f64]| v.iter().all(|x| *x >= -tol);
        match self {
            ConvexSet::AllSpace { .. } => v.iter().all(|x| x.is_finite()),
            ConvexSet::NonnegOrthant { .. } => nonneg(v),
            ConvexSet::Box { lower, upper } => v
                .iter()
                .zip(lower)
                .zip(upper)
                .all(|((x, l), u)| *x >= l - tol && *x <= u + tol),
            ConvexSet::Simplex { .. } => nonneg(v) && (v.iter().sum::<f64>() - 1.0).abs() <= tol,
            ConvexSet::BallNonneg { radius_sq, .. } => {
                nonneg(v) && v.iter().map(|x| x * x).sum::<f64>() <= radius_sq + tol
            }
        }
    }

    /// True for sets whose projection is componentwise clamping.
    pub fn is_box_like(&self) -> bool {
        matches!(
            self,
            ConvexSet::AllSpace { .. } | ConvexSet::NonnegOrthant { .. } | ConvexSet::Box { .. }
        )
    }

    /// Componentwise bounds for box-like sets.
    pub(crate) fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        match self {
            ConvexSet::AllSpace { .. } => Some((vec![f64::NEG_INFINITY; d], vec![f64::INFINITY; d])),
            ConvexSet::NonnegOrthant { .. } => Some((vec![0.0; d], vec![f64::INFINITY; d])),
            ConvexSet::Box { lower, upper } => Some((lower.clone(), upper.clone())),
            _ => None,
        }
    }
}

/// Sort-and-threshold projection onto the unit simplex.
fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i as f64 + 1.0);
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Cartesian product of canonical sets over consecutive coordinate ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ConvexSet>", into = "Vec<ConvexSet>")]
pub struct ProductSet {
    blocks: Vec<ConvexSet>,
    offsets: Vec<usize>,
    dim: usize,
}

impl ProductSet {
    pub fn new(blocks: Vec<ConvexSet>) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidInput("product set needs at least one block".into()));
        }
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for b in &blocks {
            b.validate()?;
            offsets.push(dim);
            dim += b.dim();
        }
        Ok(Self { blocks, offsets, dim })
    }

    pub fn single(set: ConvexSet) -> Result<Self> {
        Self::new(vec![set])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[ConvexSet] {
        &self.blocks
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Coordinate range of each block.
    pub fn ranges(&self) -> impl Iterator<Item = (Range<usize>, &ConvexSet)> + '_ {
        self.blocks
            .iter()
            .zip(&self.offsets)
            .map(|(b, &o)| (o..o + b.dim(), b))
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim, v.len())?;
        let mut out = v.clone();
        self.project_in_place(out.as_mut_slice());
        Ok(out)
    }

    pub(crate) fn project_in_place(&self, v: &mut [f64]) {
        for (r, set) in self.ranges() {
            set.project_in_place(&mut v[r]);
        }
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim(self.dim, v.len())?;
        Ok(self.ranges().all(|(r, s)| s.contains_slice(&v.as_slice()[r], tol)))
    }

    pub fn is_all_space(&self) -> bool {
        self.blocks.iter().all(|b| matches!(b, ConvexSet::AllSpace { .. }))
    }

    pub fn is_box_like(&self) -> bool {
        self.blocks.iter().all(ConvexSet::is_box_like)
    }

    /// The sub-product covering `range`, which must align with block
    /// boundaries.
    pub fn restrict(&self, range: Range<usize>) -> Result<ProductSet> {
        let mut picked = Vec::new();
        for (r, set) in self.ranges() {
            if r.start >= range.start && r.end <= range.end {
                picked.push(set.clone());
            } else if r.start < range.end && r.end > range.start {
                return Err(Error::InvalidInput(format!(
                    "range {range:?} splits set block {r:?}"
                )));
            }
        }
        let out = ProductSet::new(picked)?;
        check_dim(range.len(), out.dim)?;
        Ok(out)
    }
}

/// Free-function form of [`ProductSet::project`].
pub fn project_product(sets: &ProductSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    sets.project(v)
}

impl TryFrom<Vec<ConvexSet>> for ProductSet {
    type Error = Error;
    fn try_from(blocks: Vec<ConvexSet>) -> Result<Self> {
        ProductSet::new(blocks)
    }
}

impl From<ProductSet> for Vec<ConvexSet> {
    fn from(p: ProductSet) -> Self {
        p.blocks
    }
}
