//! JSON problem files and serde helpers for nalgebra types.
//!
//! A problem file looks like
//! `{"name", "n", "m", "operator", "coupled", "easy_set", "blocks", "metadata", "initial_point"}`
//! where `operator` is `{"affine": {"A": [[..]], "b": [..]}}` or
//! `{"builtin": {"family": "walras" | "movset", ..}}`, and `coupled` is one of
//! `{"none": {}}`, `{"moving_set": {"R", "B", "d"}}`, `{"budget": {"goods", "endowments"}}`
//! or `{"builtin": ..}`. Matrices are arrays of rows.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AffineOperator, CoupledConstraints, NoCoupling, QviProblem};
use crate::problems::{BudgetConstraints, MovSetData, MovingSetConstraint, WalrasianData, DEFAULT_MARGIN};
use crate::sets::{ConvexSet, ProductSet};

/// `DVector<f64>` as a flat JSON array.
pub mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Vec::<f64>::deserialize(d).map(DVector::from_vec)
    }
}

/// `DMatrix<f64>` as an array of rows.
pub mod dmat {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("matrix rows have different lengths"));
        }
        Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.into_iter().flatten()))
    }
}

/// Parameters of a seeded generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Walras {
        consumers: usize,
        goods: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        capacity: Option<f64>,
        seed: u64,
    },
    Movset {
        n: usize,
        seed: u64,
        #[serde(default = "default_margin")]
        spectral_margin: f64,
        #[serde(default = "default_radius")]
        d: f64,
    },
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

fn default_radius() -> f64 {
    1.0
}

impl GeneratorSpec {
    pub fn generate(&self) -> Result<QviProblem> {
        match *self {
            GeneratorSpec::Walras { consumers, goods, capacity, seed } => {
                WalrasianData::random(consumers, goods, capacity, seed)?.problem()
            }
            GeneratorSpec::Movset { n, seed, spectral_margin, d } => {
                MovSetData::random(n, seed, spectral_margin, d)?.problem()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorFile {
    Affine {
        #[serde(rename = "A", with = "dmat")]
        a: DMatrix<f64>,
        #[serde(with = "dvec")]
        b: DVector<f64>,
    },
    Builtin(GeneratorSpec),
}

impl OperatorFile {
    pub fn affine(a: &DMatrix<f64>, b: &DVector<f64>) -> Self {
        OperatorFile::Affine { a: a.clone(), b: b.clone() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledFile {
    None {},
    MovingSet {
        #[serde(rename = "R", with = "dmat")]
        r: DMatrix<f64>,
        #[serde(rename = "B", with = "dmat")]
        b: DMatrix<f64>,
        d: f64,
    },
    Budget {
        goods: usize,
        endowments: Vec<Vec<f64>>,
    },
    Builtin(GeneratorSpec),
}

/// On-disk form of a [`QviProblem`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemFile {
    pub name: String,
    pub n: usize,
    pub m: usize,
    pub operator: OperatorFile,
    pub coupled: CoupledFile,
    pub easy_set: Vec<ConvexSet>,
    pub blocks: Vec<usize>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_point: Option<Vec<f64>>,
}

impl ProblemFile {
    /// Compact form that regenerates the instance from its seed.
    pub fn builtin(spec: GeneratorSpec) -> Result<Self> {
        let p = spec.generate()?;
        Ok(Self {
            name: p.name.clone(),
            n: p.n(),
            m: p.m(),
            operator: OperatorFile::Builtin(spec.clone()),
            coupled: CoupledFile::Builtin(spec),
            easy_set: p.easy_set.blocks().to_vec(),
            blocks: p.block_sizes(),
            metadata: p.metadata.clone(),
            initial_point: None,
        })
    }

    /// Explicit form with all data written out. Fails for closure-backed
    /// operators or constraints.
    pub fn explicit(p: &QviProblem) -> Result<Self> {
        let operator = p
            .operator
            .describe()
            .ok_or_else(|| Error::InvalidInput("operator has no file representation".into()))?;
        let coupled = p
            .coupled
            .describe()
            .ok_or_else(|| Error::InvalidInput("coupled constraints have no file representation".into()))?;
        Ok(Self {
            name: p.name.clone(),
            n: p.n(),
            m: p.m(),
            operator,
            coupled,
            easy_set: p.easy_set.blocks().to_vec(),
            blocks: p.block_sizes(),
            metadata: p.metadata.clone(),
            initial_point: p.initial_point.as_ref().map(|v| v.as_slice().to_vec()),
        })
    }

    pub fn into_problem(self) -> Result<QviProblem> {
        let parse = |msg: String| Error::Parse(msg);
        let easy_set = ProductSet::new(self.easy_set).map_err(|e| parse(format!("easy_set: {e}")))?;
        let mut problem = match (self.operator, self.coupled) {
            (OperatorFile::Builtin(spec), coupled) => {
                if let CoupledFile::Builtin(other) = &coupled {
                    if *other != spec {
                        return Err(parse("operator and coupled generators differ".into()));
                    }
                } else {
                    return Err(parse("builtin operator needs builtin coupled constraints".into()));
                }
                let p = spec.generate().map_err(|e| parse(format!("generator: {e}")))?;
                if p.easy_set != easy_set || p.block_sizes() != self.blocks {
                    return Err(parse("easy_set or blocks disagree with the generator".into()));
                }
                let mut p = p;
                p.name = self.name;
                p
            }
            (OperatorFile::Affine { a, b }, coupled) => {
                let op = AffineOperator::new(a, b).map_err(|e| parse(format!("operator: {e}")))?;
                let n = easy_set.dim();
                let con: Arc<dyn CoupledConstraints> = match coupled {
                    CoupledFile::None {} => Arc::new(NoCoupling { dim: n }),
                    CoupledFile::MovingSet { r, b, d } => {
                        Arc::new(MovingSetConstraint::new(r, b, d).map_err(|e| parse(format!("coupled: {e}")))?)
                    }
                    CoupledFile::Budget { goods, endowments } => Arc::new(
                        BudgetConstraints::new(goods, endowments.into_iter().map(DVector::from_vec).collect())
                            .map_err(|e| parse(format!("coupled: {e}")))?,
                    ),
                    CoupledFile::Builtin(spec) => spec.generate().map_err(|e| parse(format!("generator: {e}")))?.coupled,
                };
                QviProblem::new(self.name, Arc::new(op), con, easy_set, Some(&self.blocks))
                    .map_err(|e| parse(e.to_string()))?
            }
        };
        if problem.n() != self.n || problem.m() != self.m {
            return Err(parse(format!(
                "declared n={}, m={} but data gives n={}, m={}",
                self.n,
                self.m,
                problem.n(),
                problem.m()
            )));
        }
        for (k, v) in self.metadata {
            problem.metadata.insert(k, v);
        }
        if let Some(y) = self.initial_point {
            problem = problem.with_initial_point(DVector::from_vec(y)).map_err(|e| parse(format!("initial_point: {e}")))?;
        }
        Ok(problem)
    }
}

pub fn read_problem_file(path: impl AsRef<Path>) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.as_ref().display())))
}

pub fn read_problem(path: impl AsRef<Path>) -> Result<QviProblem> {
    read_problem_file(path)?.into_problem()
}

pub fn write_problem_file(path: impl AsRef<Path>, file: &ProblemFile) -> Result<()> {
    let text = serde_json::to_string_pretty(file)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_movset, gen_walrasian};

    fn roundtrip(file: &ProblemFile) -> QviProblem {
        let text = serde_json::to_string(file).unwrap();
        serde_json::from_str::<ProblemFile>(&text).unwrap().into_problem().unwrap()
    }

    fn same_behavior(a: &QviProblem, b: &QviProblem) {
        assert_eq!(a.n(), b.n());
        assert_eq!(a.m(), b.m());
        assert_eq!(a.easy_set, b.easy_set);
        assert_eq!(a.blocks, b.blocks);
        let x = DVector::from_fn(a.n(), |i, _| (i as f64 * 0.37).sin());
        let y = DVector::from_fn(a.n(), |i, _| (i as f64 * 0.11).cos());
        assert_eq!(a.operator.eval(&x), b.operator.eval(&x));
        assert_eq!(a.coupled.eval(&y, &x), b.coupled.eval(&y, &x));
    }

    #[test]
    fn explicit_walras_roundtrip() {
        let p = gen_walrasian(2, 3, None, 4).unwrap();
        let q = roundtrip(&ProblemFile::explicit(&p).unwrap());
        same_behavior(&p, &q);
        assert_eq!(q.initial_point, p.initial_point);
        assert_eq!(q.metadata.get("seed").map(String::as_str), Some("4"));
    }

    #[test]
    fn builtin_movset_roundtrip() {
        let spec = GeneratorSpec::Movset { n: 4, seed: 8, spectral_margin: 0.5, d: 1.0 };
        let file = ProblemFile::builtin(spec).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"builtin\""));
        let q = roundtrip(&file);
        same_behavior(&gen_movset(4, 8, 0.5, 1.0).unwrap(), &q);
    }

    #[test]
    fn handwritten_file_with_defaults() {
        let text = r#"{
            "name": "tiny", "n": 1, "m": 1,
            "operator": {"affine": {"A": [[1.0]], "b": [-4.0]}},
            "coupled": {"moving_set": {"R": [[1.0]], "B": [[0.5]], "d": 1.0}},
            "easy_set": [{"type": "all_space", "dim": 1}],
            "blocks": [1],
            "initial_point": [0.0]
        }"#;
        let p = serde_json::from_str::<ProblemFile>(text).unwrap().into_problem().unwrap();
        assert_eq!(p.n(), 1);
        assert_eq!(p.coupled.eval(&DVector::from_element(1, 2.0), &DVector::from_element(1, 2.0))[0], 0.0);
    }

    #[test]
    fn inconsistent_declarations_are_parse_errors() {
        let mut file = ProblemFile::explicit(&gen_movset(3, 1, 0.5, 1.0).unwrap()).unwrap();
        file.n = 4;
        assert!(matches!(file.into_problem(), Err(Error::Parse(_))));
        let ragged = r#"{"affine": {"A": [[1.0, 2.0], [3.0]], "b": [0.0, 0.0]}}"#;
        assert!(serde_json::from_str::<OperatorFile>(ragged).is_err());
    }
}
