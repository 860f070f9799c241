use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mixing weights `ω` between the gradient frozen at `x^k` (`ω = 1`) and the
/// free gradient (`ω = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Omega {
    Scalar(f64),
    PerConstraint(Vec<f64>),
}

impl Omega {
    pub fn resolve(&self, m: usize) -> Result<DVector<f64>> {
        let v = match self {
            Omega::Scalar(w) => DVector::from_element(m, *w),
            Omega::PerConstraint(ws) => {
                if ws.len() != m {
                    return Err(Error::Config(format!("omega has {} entries but the problem has {m} constraints", ws.len())));
                }
                DVector::from_column_slice(ws)
            }
        };
        if v.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Config("omega entries must lie in [0, 1]".into()));
        }
        Ok(v)
    }
}

/// Approximation `F̂^k` of the operator in the subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FhatMode {
    /// `F̂(y) = F(x^k)`.
    Constant,
    /// `F̂(y) = F(x^k) + ∇F(x^k)(y - x^k)`.
    FirstOrder,
    /// `F̂(y) = F(y)`.
    Exact,
}

/// Proximal term `q (y - x^k)` added to the subproblem operator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    None,
    Fixed(f64),
    /// Smallest `q >= 0` making the subproblem operator strongly monotone with
    /// the given modulus (exact for affine operators, sampled otherwise).
    Auto(f64),
}

impl FromStr for FhatMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(FhatMode::Constant),
            "first-order" => Ok(FhatMode::FirstOrder),
            "exact" => Ok(FhatMode::Exact),
            _ => Err(Error::Config(format!("unknown fhat mode {s:?} (expected constant, first-order or exact)"))),
        }
    }
}

/// Parses `none`, `fixed:<q>` or `auto:<c>`.
impl FromStr for QMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad q mode {s:?} (expected none, fixed:<q> or auto:<c>)"));
        if s == "none" {
            return Ok(QMode::None);
        }
        let (kind, value) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = value.trim().parse().map_err(|_| bad())?;
        match kind {
            "fixed" => Ok(QMode::Fixed(v)),
            "auto" => Ok(QMode::Auto(v)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DwConfig {
    pub omega: Omega,
    pub fhat_mode: FhatMode,
    pub q_mode: QMode,
    pub jacobi: bool,
    /// Solve Jacobi blocks on the rayon pool.
    pub jacobi_parallel: bool,
    /// Stop when `gap >= -gap_tol·(1 + |ζ|₂)`.
    pub gap_tol: f64,
    /// A step `|y - x|_∞ <= step_tol·(1 + |x|_∞)` counts as no progress.
    pub step_tol: f64,
    /// Largest QVI KKT residual accepted as converged.
    pub kkt_tol: f64,
    /// Natural-residual tolerance of the subproblem solves.
    pub inner_tol: f64,
    pub master_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub mu_max: f64,
    pub seed: u64,
}

impl Default for DwConfig {
    fn default() -> Self {
        Self {
            omega: Omega::Scalar(0.0),
            fhat_mode: FhatMode::Exact,
            q_mode: QMode::None,
            jacobi: false,
            jacobi_parallel: false,
            gap_tol: 1e-6,
            step_tol: 1e-12,
            kkt_tol: 1e-5,
            inner_tol: 1e-10,
            master_tol: 1e-11,
            max_outer: 100,
            max_inner: 100_000,
            mu_max: 1e8,
            seed: 0,
        }
    }
}

impl DwConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        positive(self.gap_tol, "gap_tol")?;
        positive(self.inner_tol, "inner_tol")?;
        positive(self.master_tol, "master_tol")?;
        positive(self.kkt_tol, "kkt_tol")?;
        positive(self.mu_max, "mu_max")?;
        if !(self.step_tol >= 0.0) {
            return Err(Error::Config("step_tol must be nonnegative".into()));
        }
        if self.inner_tol >= self.gap_tol {
            return Err(Error::Config("inner_tol must be smaller than gap_tol".into()));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        match self.q_mode {
            QMode::Fixed(q) if !(q >= 0.0 && q.is_finite()) => Err(Error::Config("fixed q must be >= 0".into())),
            QMode::Auto(c) if !(c > 0.0 && c.is_finite()) => Err(Error::Config("auto c_target must be > 0".into())),
            _ => match &self.omega {
                Omega::Scalar(w) if !(0.0..=1.0).contains(w) => Err(Error::Config("omega must lie in [0, 1]".into())),
                Omega::PerConstraint(ws) if ws.iter().any(|w| !(0.0..=1.0).contains(w)) => {
                    Err(Error::Config("omega entries must lie in [0, 1]".into()))
                }
                _ => Ok(()),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        DwConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            DwConfig { omega: Omega::Scalar(1.5), ..DwConfig::default() },
            DwConfig { gap_tol: 0.0, ..DwConfig::default() },
            DwConfig { inner_tol: 1e-3, gap_tol: 1e-4, ..DwConfig::default() },
            DwConfig { q_mode: QMode::Auto(0.0), ..DwConfig::default() },
            DwConfig { q_mode: QMode::Fixed(-1.0), ..DwConfig::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn mode_strings() {
        assert_eq!("none".parse::<QMode>().unwrap(), QMode::None);
        assert_eq!("fixed:0.5".parse::<QMode>().unwrap(), QMode::Fixed(0.5));
        assert_eq!("auto:1e-2".parse::<QMode>().unwrap(), QMode::Auto(1e-2));
        assert!("auto".parse::<QMode>().is_err());
        assert!("fixed:x".parse::<QMode>().is_err());
        assert_eq!("first-order".parse::<FhatMode>().unwrap(), FhatMode::FirstOrder);
        assert!("linear".parse::<FhatMode>().is_err());
    }

    #[test]
    fn omega_resolution() {
        assert_eq!(Omega::Scalar(0.5).resolve(3).unwrap().as_slice(), &[0.5; 3]);
        assert!(Omega::PerConstraint(vec![0.1, 0.2]).resolve(3).is_err());
        let json = serde_json::to_string(&DwConfig::default()).unwrap();
        let back: DwConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, DwConfig::default());
    }
}
