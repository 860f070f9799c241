//! Benchmark grids over the generator families, aggregated into CSV rows.

use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direct::{solve_direct, DirectOptions};
use crate::engine::{run_dw, DwConfig, Omega};
use crate::error::{Error, Result};
use crate::model::qvi_kkt_residual;
use crate::problems::{gen_movset, gen_walrasian, DEFAULT_MARGIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Walras,
    Movset,
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "walras" => Ok(Family::Walras),
            "movset" => Ok(Family::Movset),
            _ => Err(Error::InvalidInput(format!("unknown family {s:?} (expected walras or movset)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverId {
    Dw,
    DirectKkt,
}

impl SolverId {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverId::Dw => "dw",
            SolverId::DirectKkt => "direct_kkt",
        }
    }
}

impl FromStr for SolverId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dw" => Ok(SolverId::Dw),
            "direct" | "direct_kkt" => Ok(SolverId::DirectKkt),
            _ => Err(Error::InvalidInput(format!("unknown solver {s:?} (expected dw or direct_kkt)"))),
        }
    }
}

/// One grid cell: `(C, G)` for Walrasian, `n` for moving sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridCell {
    Walras { consumers: usize, goods: usize },
    Movset { n: usize },
}

impl GridCell {
    /// Parses `"CxG"` for Walrasian cells or `"n"` for moving-set cells.
    pub fn parse(family: Family, s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("bad grid cell {s:?}"));
        match family {
            Family::Walras => {
                let (c, g) = s.split_once(['x', 'X']).ok_or_else(bad)?;
                Ok(GridCell::Walras {
                    consumers: c.trim().parse().map_err(|_| bad())?,
                    goods: g.trim().parse().map_err(|_| bad())?,
                })
            }
            Family::Movset => Ok(GridCell::Movset { n: s.trim().parse().map_err(|_| bad())? }),
        }
    }

    pub fn n(&self) -> usize {
        match *self {
            GridCell::Walras { consumers, goods } => (consumers + 2) * goods,
            GridCell::Movset { n } => n,
        }
    }

    fn label(&self) -> String {
        match *self {
            GridCell::Walras { consumers, goods } => format!("C={consumers};G={goods}"),
            GridCell::Movset { n } => format!("n={n}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchSpec {
    pub family: Family,
    pub grid: Vec<GridCell>,
    pub seeds_per_cell: usize,
    pub base_seed: u64,
    pub config: DwConfig,
    /// ω values to sweep; empty keeps `config.omega`.
    pub omegas: Vec<f64>,
    pub solvers: Vec<SolverId>,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
    pub accept_tol: f64,
    pub capacity: Option<f64>,
    pub spectral_margin: f64,
    pub d: f64,
}

impl BenchSpec {
    pub fn new(family: Family, grid: Vec<GridCell>) -> Self {
        Self {
            family,
            grid,
            seeds_per_cell: 20,
            base_seed: 0,
            config: DwConfig::default(),
            omegas: Vec::new(),
            solvers: vec![SolverId::Dw],
            jobs: 0,
            accept_tol: 1e-5,
            capacity: None,
            spectral_margin: DEFAULT_MARGIN,
            d: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidInput("empty benchmark grid".into()));
        }
        if self.seeds_per_cell == 0 {
            return Err(Error::InvalidInput("seeds_per_cell must be at least 1".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::InvalidInput("no solvers selected".into()));
        }
        for cell in &self.grid {
            let ok = matches!(
                (self.family, cell),
                (Family::Walras, GridCell::Walras { .. }) | (Family::Movset, GridCell::Movset { .. })
            );
            if !ok {
                return Err(Error::InvalidInput(format!("grid cell {cell:?} does not match the family")));
            }
        }
        self.config.validate()
    }
}

/// Aggregate over the seeds of one (cell, ω, solver) combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub params: String,
    pub solver: String,
    pub mean_time_s: f64,
    pub max_time_s: f64,
    pub mean_iters: f64,
    pub max_iters: usize,
    pub mean_kkt_residual: f64,
    pub failures: usize,
}

/// Outcome of a single solve inside a benchmark.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub time_s: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub success: bool,
}

struct Job {
    row: usize,
    cell: GridCell,
    omega: Option<f64>,
    solver: SolverId,
    seed: u64,
}

fn run_one(spec: &BenchSpec, job: &Job) -> RunOutcome {
    let start = Instant::now();
    let problem = match job.cell {
        GridCell::Walras { consumers, goods } => gen_walrasian(consumers, goods, spec.capacity, job.seed),
        GridCell::Movset { n } => gen_movset(n, job.seed, spec.spectral_margin, spec.d),
    };
    let failed = |start: Instant| RunOutcome {
        time_s: start.elapsed().as_secs_f64(),
        iterations: 0,
        kkt_residual: f64::NAN,
        success: false,
    };
    let Ok(problem) = problem else { return failed(start) };
    let y1 = problem.initial_point.clone().expect("generators set an initial point");
    let (iterations, x, mu, ok) = match job.solver {
        SolverId::Dw => {
            let mut config = spec.config.clone();
            if let Some(w) = job.omega {
                config.omega = Omega::Scalar(w);
            }
            match run_dw(&problem, &y1, &config) {
                Ok(r) => {
                    let ok = r.converged();
                    (r.iterations, r.solution.x, r.solution.multipliers, ok)
                }
                Err(_) => return failed(start),
            }
        }
        SolverId::DirectKkt => {
            let opts = DirectOptions { seed: job.seed, ..DirectOptions::default() };
            match solve_direct(&problem, Some(&y1), &opts) {
                Ok(r) => (r.iterations, r.solution.x, r.solution.multipliers, r.converged),
                Err(_) => return failed(start),
            }
        }
    };
    let time_s = start.elapsed().as_secs_f64();
    // Re-verify independently of the solver's own report.
    let kkt_residual = qvi_kkt_residual(&problem, &x, &mu).unwrap_or(f64::NAN);
    RunOutcome { time_s, iterations, kkt_residual, success: ok && kkt_residual <= spec.accept_tol }
}

/// Runs every (cell, ω, solver, seed) combination and aggregates per
/// (cell, ω, solver). Rows come out in grid order; only the timing columns
/// depend on the machine.
pub fn run_bench(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let omegas: Vec<Option<f64>> =
        if spec.omegas.is_empty() { vec![None] } else { spec.omegas.iter().copied().map(Some).collect() };
    let mut labels = Vec::new();
    let mut jobs = Vec::new();
    for cell in &spec.grid {
        for omega in &omegas {
            for solver in &spec.solvers {
                let row = labels.len();
                let mut params = cell.label();
                if let Some(w) = omega {
                    params.push_str(&format!(";omega={w}"));
                }
                labels.push((cell.n(), params, solver.as_str().to_string()));
                for s in 0..spec.seeds_per_cell {
                    jobs.push(Job { row, cell: *cell, omega: *omega, solver: *solver, seed: spec.base_seed + s as u64 });
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<RunOutcome> = pool.install(|| jobs.par_iter().map(|j| run_one(spec, j)).collect());

    let mut grouped: Vec<Vec<&RunOutcome>> = vec![Vec::new(); labels.len()];
    for (job, out) in jobs.iter().zip(&outcomes) {
        grouped[job.row].push(out);
    }
    Ok(labels
        .into_iter()
        .zip(grouped)
        .map(|((n, params, solver), runs)| aggregate(n, params, solver, &runs))
        .collect())
}

fn aggregate(n: usize, params: String, solver: String, runs: &[&RunOutcome]) -> BenchRow {
    let count = runs.len().max(1) as f64;
    let residuals: Vec<f64> = runs.iter().map(|r| r.kkt_residual).filter(|r| r.is_finite()).collect();
    BenchRow {
        n,
        params,
        solver,
        mean_time_s: runs.iter().map(|r| r.time_s).sum::<f64>() / count,
        max_time_s: runs.iter().map(|r| r.time_s).fold(0.0, f64::max),
        mean_iters: runs.iter().map(|r| r.iterations as f64).sum::<f64>() / count,
        max_iters: runs.iter().map(|r| r.iterations).max().unwrap_or(0),
        mean_kkt_residual: if residuals.is_empty() {
            f64::NAN
        } else {
            residuals.iter().sum::<f64>() / residuals.len() as f64
        },
        failures: runs.iter().filter(|r| !r.success).count(),
    }
}

/// Writes rows with the header
/// `n,params,solver,mean_time_s,max_time_s,mean_iters,max_iters,mean_kkt_residual,failures`.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub const CSV_COLUMNS: [&str; 9] =
    ["n", "params", "solver", "mean_time_s", "max_time_s", "mean_iters", "max_iters", "mean_kkt_residual", "failures"];

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}
