//! Python bindings. Problems travel as JSON strings in the problem-file
//! format; reports come back as dictionaries.

use nalgebra::DVector;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dwqvi::direct::{solve_direct as direct, DirectOptions};
use dwqvi::engine::{run_dw, DwConfig, Omega};
use dwqvi::io::{GeneratorSpec, ProblemFile};
use dwqvi::model::{qvi_kkt_residual, QviProblem};
use dwqvi::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Config(_) | Error::Parse(_) | Error::Json(_) | Error::Dimension { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_problem(text: &str) -> dwqvi::Result<QviProblem> {
    serde_json::from_str::<ProblemFile>(text)?.into_problem()
}

fn problem_json(spec: GeneratorSpec, explicit: bool) -> dwqvi::Result<String> {
    let file = if explicit { ProblemFile::explicit(&spec.generate()?)? } else { ProblemFile::builtin(spec)? };
    Ok(serde_json::to_string(&file)?)
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    omega: Vec<f64>,
    fhat: &str,
    q: &str,
    jacobi: bool,
    gap_tol: f64,
    inner_tol: f64,
    max_outer: usize,
    kkt_tol: f64,
) -> dwqvi::Result<DwConfig> {
    let omega = match omega.as_slice() {
        [w] => Omega::Scalar(*w),
        _ => Omega::PerConstraint(omega),
    };
    let config = DwConfig {
        omega,
        fhat_mode: fhat.parse()?,
        q_mode: q.parse()?,
        jacobi,
        gap_tol,
        inner_tol,
        max_outer,
        kkt_tol,
        ..DwConfig::default()
    };
    config.validate()?;
    Ok(config)
}

fn to_dict<'py>(py: Python<'py>, value: serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

/// Seeded Walrasian instance as a problem-file JSON string.
#[pyfunction]
#[pyo3(signature = (consumers, goods, seed=0, capacity=None, explicit=false))]
fn gen_walras(consumers: usize, goods: usize, seed: u64, capacity: Option<f64>, explicit: bool) -> PyResult<String> {
    problem_json(GeneratorSpec::Walras { consumers, goods, capacity, seed }, explicit).map_err(py_err)
}

/// Seeded moving-set instance as a problem-file JSON string.
#[pyfunction]
#[pyo3(signature = (n, seed=0, margin=dwqvi::problems::DEFAULT_MARGIN, radius=1.0, explicit=false))]
fn gen_movset(n: usize, seed: u64, margin: f64, radius: f64, explicit: bool) -> PyResult<String> {
    problem_json(GeneratorSpec::Movset { n, seed, spectral_margin: margin, d: radius }, explicit).map_err(py_err)
}

/// Runs the decomposition and returns the report as a dict. `omega` is a
/// list with one entry, or one entry per coupled constraint.
#[pyfunction]
#[pyo3(signature = (
    problem, y1=None, omega=vec![0.0], fhat="exact", q="none", jacobi=false,
    gap_tol=1e-6, inner_tol=1e-10, max_outer=100, kkt_tol=1e-5
))]
#[allow(clippy::too_many_arguments)]
fn solve<'py>(
    py: Python<'py>,
    problem: &str,
    y1: Option<Vec<f64>>,
    omega: Vec<f64>,
    fhat: &str,
    q: &str,
    jacobi: bool,
    gap_tol: f64,
    inner_tol: f64,
    max_outer: usize,
    kkt_tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let p = parse_problem(problem).map_err(py_err)?;
    let config = build_config(omega, fhat, q, jacobi, gap_tol, inner_tol, max_outer, kkt_tol).map_err(py_err)?;
    let y1 = match y1 {
        Some(v) => DVector::from_vec(v),
        None => p.initial_point.clone().ok_or_else(|| PyValueError::new_err("problem has no initial point"))?,
    };
    let report = py.detach(|| run_dw(&p, &y1, &config)).map_err(py_err)?;
    to_dict(py, serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

/// Solves the full KKT system directly and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (problem, seed=0))]
fn solve_direct<'py>(py: Python<'py>, problem: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let p = parse_problem(problem).map_err(py_err)?;
    let opts = DirectOptions { seed, ..DirectOptions::default() };
    let report = py.detach(|| direct(&p, p.initial_point.as_ref(), &opts)).map_err(py_err)?;
    to_dict(py, serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?)
}

/// KKT residual of `(x, mu)` for the problem.
#[pyfunction]
fn kkt_residual(problem: &str, x: Vec<f64>, mu: Vec<f64>) -> PyResult<f64> {
    let p = parse_problem(problem).map_err(py_err)?;
    qvi_kkt_residual(&p, &DVector::from_vec(x), &DVector::from_vec(mu)).map_err(py_err)
}

#[pymodule]
fn pydwqvi(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_walras, m)?)?;
    m.add_function(wrap_pyfunction!(gen_movset, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(solve_direct, m)?)?;
    m.add_function(wrap_pyfunction!(kkt_residual, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_json_round_trips() {
        let text = problem_json(GeneratorSpec::Walras { consumers: 2, goods: 3, capacity: None, seed: 4 }, false).unwrap();
        let p = parse_problem(&text).unwrap();
        assert_eq!(p.n(), 12);
        assert_eq!(p.m(), 2);
    }

    #[test]
    fn config_strings_are_validated() {
        let ok = build_config(vec![0.5], "first-order", "auto:0.01", true, 1e-6, 1e-10, 10, 1e-5).unwrap();
        assert_eq!(ok.omega, Omega::Scalar(0.5));
        assert!(build_config(vec![0.0], "exact", "maybe", false, 1e-6, 1e-10, 10, 1e-5).is_err());
        assert!(build_config(vec![2.0], "exact", "none", false, 1e-6, 1e-10, 10, 1e-5).is_err());
    }
}
