use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use dwqvi::bench::{run_bench, write_csv, BenchSpec, Family, GridCell, SolverId};
use dwqvi::direct::{solve_direct, DirectOptions};
use dwqvi::engine::{run_dw_observed, DwConfig, FhatMode, Omega};
use dwqvi::io::{read_problem, write_problem_file, GeneratorSpec, ProblemFile};
use dwqvi::problems::DEFAULT_MARGIN;
use dwqvi::Error;

#[derive(Parser)]
#[command(name = "dwqvi", version, about = "Dantzig-Wolfe decomposition for quasi-variational inequalities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded benchmark instance as a problem file.
    Gen(GenArgs),
    /// Solve a problem file with the decomposition.
    Solve(SolveArgs),
    /// Solve a problem file through its full KKT system.
    Direct(DirectArgs),
    /// Sweep a grid of generated instances and write a CSV summary.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    family: FamilyArg,
    /// `CxG` for walras, `n` for movset.
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Firm capacity M (walras); defaults to 10·C·G.
    #[arg(long)]
    capacity: Option<f64>,
    /// Spectral margin of the operator (movset).
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    /// Radius of the moving ball (movset).
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Write all matrices instead of the generator seed.
    #[arg(long)]
    explicit: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Walras,
    Movset,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Walras => Family::Walras,
            FamilyArg::Movset => Family::Movset,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FhatArg {
    Constant,
    FirstOrder,
    Exact,
}

/// Decomposition settings shared by `solve` and `bench`.
#[derive(Args)]
struct DwFlags {
    /// ω in [0, 1]; a comma list gives one value per coupled constraint
    /// (solve) or the values to sweep (bench).
    #[arg(long)]
    omega: Option<String>,
    #[arg(long, value_enum, default_value = "exact")]
    fhat: FhatArg,
    /// none, fixed:<q> or auto:<c>.
    #[arg(long, default_value = "none")]
    q: String,
    /// Split the subproblem into one VI per block.
    #[arg(long)]
    jacobi: bool,
    /// Solve the Jacobi blocks in parallel.
    #[arg(long)]
    jacobi_parallel: bool,
    #[arg(long, default_value_t = 1e-6)]
    gap_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    inner_tol: f64,
    #[arg(long, default_value_t = 100)]
    max_outer: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest verified KKT residual that counts as solved.
    #[arg(long, default_value_t = 1e-5)]
    accept_tol: f64,
}

#[derive(Args)]
struct SolveArgs {
    problem: PathBuf,
    #[command(flatten)]
    dw: DwFlags,
    /// JSON array with the starting column; defaults to the file's initial point.
    #[arg(long)]
    y1: Option<PathBuf>,
    /// Print one JSON line per outer iteration on stderr.
    #[arg(long)]
    trace: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DirectArgs {
    problem: PathBuf,
    /// Seed for the randomized restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    accept_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Comma-separated cells: `CxG` for walras, `n` for movset.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<String>,
    #[arg(long, default_value_t = 20)]
    seeds_per_cell: usize,
    /// Comma-separated subset of dw, direct_kkt.
    #[arg(long, value_delimiter = ',', default_value = "dw")]
    solvers: Vec<String>,
    /// Worker threads; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    margin: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[command(flatten)]
    dw: DwFlags,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command and the exit code it maps to.
enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(_)
            | Error::Config(_)
            | Error::Parse(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::Dimension { .. } => Failure::Input(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Direct(a) => cmd_direct(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(1)
        }
    }
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Failure::Input(format!("bad {what} value {t:?}"))))
        .collect()
}

impl DwFlags {
    fn config(&self) -> Result<DwConfig, Failure> {
        let config = DwConfig {
            fhat_mode: match self.fhat {
                FhatArg::Constant => FhatMode::Constant,
                FhatArg::FirstOrder => FhatMode::FirstOrder,
                FhatArg::Exact => FhatMode::Exact,
            },
            q_mode: self.q.parse()?,
            jacobi: self.jacobi,
            jacobi_parallel: self.jacobi_parallel,
            gap_tol: self.gap_tol,
            inner_tol: self.inner_tol,
            kkt_tol: self.accept_tol,
            max_outer: self.max_outer,
            seed: self.seed,
            ..DwConfig::default()
        };
        config.validate()?;
        Ok(config)
    }

    fn solve_omega(&self) -> Result<Omega, Failure> {
        let Some(s) = &self.omega else { return Ok(Omega::Scalar(0.0)) };
        let ws = parse_list(s, "omega")?;
        Ok(if ws.len() == 1 { Omega::Scalar(ws[0]) } else { Omega::PerConstraint(ws) })
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(path: Option<&Path>, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let spec = match GridCell::parse(a.family.into(), &a.size)? {
        GridCell::Walras { consumers, goods } => {
            GeneratorSpec::Walras { consumers, goods, capacity: a.capacity, seed: a.seed }
        }
        GridCell::Movset { n } => GeneratorSpec::Movset { n, seed: a.seed, spectral_margin: a.margin, d: a.radius },
    };
    let file = if a.explicit { ProblemFile::explicit(&spec.generate()?)? } else { ProblemFile::builtin(spec)? };
    match &a.out {
        Some(p) => write_problem_file(p, &file)?,
        None => write_json(None, &file)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn read_point(path: &Path) -> Result<DVector<f64>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let v: Vec<f64> =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(DVector::from_vec(v))
}

fn cmd_solve(a: SolveArgs) -> CmdResult {
    let problem = read_problem(&a.problem)?;
    let config = DwConfig { omega: a.dw.solve_omega()?, ..a.dw.config()? };
    let y1 = match &a.y1 {
        Some(p) => read_point(p)?,
        None => problem
            .initial_point
            .clone()
            .ok_or_else(|| Failure::Input("problem has no initial point; pass --y1".into()))?,
    };
    let trace = a.trace;
    let report = run_dw_observed(&problem, &y1, &config, |rec| {
        if trace {
            if let Ok(line) = serde_json::to_string(rec) {
                eprintln!("{line}");
            }
        }
    });
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            let failure = Failure::from(e);
            if let Failure::Solver(msg) = &failure {
                write_json(a.out.as_deref(), &serde_json::json!({ "status": "error", "message": msg }))?;
            }
            return Err(failure);
        }
    };
    write_json(a.out.as_deref(), &report)?;
    let kkt = report.solution.kkt_residual;
    eprintln!("{:?} after {} iterations, KKT residual {kkt:.3e}", report.status, report.iterations);
    Ok(if report.converged() && kkt <= a.dw.accept_tol { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_direct(a: DirectArgs) -> CmdResult {
    let problem = read_problem(&a.problem)?;
    let opts = DirectOptions { seed: a.seed, ..DirectOptions::default() };
    let report = solve_direct(&problem, problem.initial_point.as_ref(), &opts)?;
    write_json(a.out.as_deref(), &report)?;
    let kkt = report.solution.kkt_residual;
    eprintln!("direct solve: converged {} after {} iterations, KKT residual {kkt:.3e}", report.converged, report.iterations);
    Ok(if report.converged && kkt <= a.accept_tol { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let family: Family = a.family.into();
    let grid = a
        .grid
        .iter()
        .filter(|s| !s.trim().is_empty())
        .map(|s| GridCell::parse(family, s))
        .collect::<Result<Vec<_>, _>>()?;
    let solvers = a.solvers.iter().map(|s| s.parse::<SolverId>()).collect::<Result<Vec<_>, _>>()?;
    let mut spec = BenchSpec::new(family, grid);
    spec.seeds_per_cell = a.seeds_per_cell;
    spec.base_seed = a.dw.seed;
    spec.config = a.dw.config()?;
    spec.omegas = match &a.dw.omega {
        Some(s) => parse_list(s, "omega")?,
        None => Vec::new(),
    };
    spec.solvers = solvers;
    spec.jobs = a.jobs;
    spec.accept_tol = a.dw.accept_tol;
    spec.capacity = a.capacity;
    spec.spectral_margin = a.margin;
    spec.d = a.radius;
    spec.validate()?;
    let rows = run_bench(&spec)?;
    write_csv(&rows, output(a.out.as_deref())?)?;
    let failures: usize = rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("{failures} failed runs");
    }
    Ok(ExitCode::SUCCESS)
}
