//! `knapsack`: projection, solver, problem generation, topology demo and
//! benchmark front end.
//!
//! Results go to stdout (or `--out`) as JSON or CSV; logs go to stderr,
//! filtered by `KNAPSACK_LOG` (error, info or debug). Exit status is 0 on
//! success, 1 when a solver fails and 2 on usage or input errors.

mod bench;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use knapsack_core::asa::{asa_solve, solve_interval_by_three, AsaConfig, AsaResult, AsaStatus};
use knapsack_core::problems::{make_random_qp, mixed_instance, HessianKind, SetKind};
use knapsack_core::rcgd::RcgdConfig;
use knapsack_core::spg::SpgConfig;
use knapsack_core::topopt::{io as topo_io, optimize_topology, TopoConfig, TopoDriver, TopoProblem, TopoStatus};
use knapsack_core::{project, KnapsackSet, ProjectionOptions, QpProblem};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or malformed input; exit 2.
    Usage(String),
    /// The computation itself failed; exit 1.
    Solver(String),
}

impl From<knapsack_core::Error> for CliError {
    fn from(e: knapsack_core::Error) -> Self {
        use knapsack_core::Error as E;
        match e {
            // rejected input rather than a failed computation
            E::InvalidConfig(_) | E::InvalidSet(_) | E::InfeasibleSet | E::WrongRhs(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Solver(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "knapsack",
    version,
    about = "Solvers for box plus single-row linear constraints"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a point onto a knapsack set.
    Project {
        #[arg(long)]
        set: PathBuf,
        /// JSON array, or an object with a `y` field.
        #[arg(long)]
        point: PathBuf,
        /// Root-finder tolerance.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimize a quadratic program over its knapsack set.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Auto)]
        mode: Mode,
        /// Stationarity tolerance on `|d1|_inf`.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        max_cycles: Option<usize>,
        /// Write `<prefix>_spg.csv`, `<prefix>_rcgd.csv` and `<prefix>_phases.csv`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// JSON file with optional `asa`, `spg` and `rcgd` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a reproducible random problem file.
    Gen {
        #[arg(long, value_enum, default_value_t = GenKind::Qp)]
        kind: GenKind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = HessianArg::DenseSpd)]
        hessian: HessianArg,
        #[arg(long = "set", value_enum, default_value_t = SetArg::Equality)]
        set_kind: SetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-material conductor design on the unit square.
    Topopt {
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long = "R", default_value_t = 0.4)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        kalpha: f64,
        #[arg(long, default_value_t = 2.0)]
        kbeta: f64,
        /// Uniform heat source.
        #[arg(long, default_value_t = 1.0)]
        load: f64,
        #[arg(long, default_value_t = 500)]
        maxiter: usize,
        #[arg(long, value_enum, default_value_t = DriverArg::Spg)]
        driver: DriverArg,
        /// Writes `<prefix>_w.txt`, `<prefix>.vtk` and `<prefix>_history.csv`.
        #[arg(long, default_value = "topopt")]
        out_prefix: PathBuf,
    },
    /// Timing sweeps; CSV on stdout.
    Bench {
        #[arg(long, value_enum, default_value_t = bench::Suite::Projection)]
        suite: bench::Suite,
        /// Comma-separated sizes, e.g. `1e3,1e4,1e5`.
        #[arg(long, default_value = "1e3,1e4,1e5")]
        sizes: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 11)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    /// Run the active-set driver on the set as given.
    Auto,
    /// Require an equality row.
    Equality,
    /// Require an interval row and solve it directly.
    Interval,
    /// Require an interval row; box solve, then both faces if needed.
    Three,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Qp,
    Projection,
}

#[derive(Clone, Copy, ValueEnum)]
enum HessianArg {
    DenseSpd,
    Diagonal,
}

#[derive(Clone, Copy, ValueEnum)]
enum SetArg {
    Equality,
    Interval,
}

#[derive(Clone, Copy, ValueEnum)]
enum DriverArg {
    Spg,
    Asa,
}

fn set_kind(s: SetArg) -> SetKind {
    match s {
        SetArg::Equality => SetKind::Equality,
        SetArg::Interval => SetKind::Interval,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn emit_json(value: &Value, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    emit_text(&text, out)
}

fn emit_text(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())
                .and_then(|_| so.flush())
                .map_err(|e| CliError::Solver(format!("stdout: {e}")))
        }
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PointFile {
    Bare(Vec<f64>),
    Wrapped { y: Vec<f64> },
}

fn cmd_project(set: &Path, point: &Path, eps: Option<f64>, out: Option<&Path>) -> CliResult<()> {
    let set: KnapsackSet = read_json(set)?;
    let y = match read_json::<PointFile>(point)? {
        PointFile::Bare(y) | PointFile::Wrapped { y } => y,
    };
    if y.len() != set.n() {
        return Err(CliError::Usage(format!(
            "field `y`: length {} does not match set dimension {}",
            y.len(),
            set.n()
        )));
    }
    let mut opts = ProjectionOptions::default();
    if let Some(e) = eps {
        opts.eps = e;
    }
    let p = project(&y, &set, opts)?;
    log::info!("projection of n = {} in {} evaluations", set.n(), p.evals);
    emit_json(
        &json!({ "config": { "projection": opts }, "z": p.z, "lambda": p.lambda, "evals": p.evals }),
        out,
    )
}

/// Solver settings as read from `--config`; every section optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SolveConfig {
    asa: AsaConfig,
    spg: SpgConfig,
    rcgd: RcgdConfig,
}

fn write_traces(prefix: &Path, runs: &[&AsaResult]) -> CliResult<()> {
    let spg: Vec<_> = runs.iter().flat_map(|r| r.spg_trace.iter().cloned()).collect();
    let rcgd: Vec<_> = runs.iter().flat_map(|r| r.rcgd_trace.iter().cloned()).collect();
    let phases: Vec<_> = runs.iter().flat_map(|r| r.phases.entries.iter().cloned()).collect();
    knapsack_core::spg::write_trace_csv(&spg, create(&with_suffix(prefix, "_spg.csv"))?)?;
    knapsack_core::rcgd::write_trace_csv(&rcgd, create(&with_suffix(prefix, "_rcgd.csv"))?)?;
    let mut w = csv::Writer::from_writer(create(&with_suffix(prefix, "_phases.csv"))?);
    for p in &phases {
        w.serialize(p).map_err(|e| CliError::Solver(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Solver(e.to_string()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    problem: &Path,
    mode: Mode,
    tol: Option<f64>,
    max_cycles: Option<usize>,
    trace: Option<&Path>,
    config: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let mut qp: QpProblem = read_json(problem)?;
    let mut cfg: SolveConfig = match config {
        Some(p) => read_json(p)?,
        None => SolveConfig::default(),
    };
    if let Some(t) = tol {
        cfg.asa.tol = t;
    }
    if let Some(m) = max_cycles {
        cfg.asa.max_cycles = m;
    }
    cfg.asa.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.spg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let set = qp.set.clone();
    match mode {
        Mode::Equality if !set.is_equality() => {
            return Err(CliError::Usage(
                "mode `equality` needs a set with an `eq` right-hand side".into(),
            ))
        }
        Mode::Interval | Mode::Three if set.is_equality() => {
            return Err(CliError::Usage(
                "this mode needs a set with `lo`/`hi` right-hand side".into(),
            ))
        }
        _ => {}
    }
    let x0 = vec![0.0; qp.n()];
    let (res, which, runs) = if mode == Mode::Three {
        let r = solve_interval_by_three(&mut qp, &set, &x0, &cfg.asa, &cfg.spg, &cfg.rcgd)?;
        let (face, best) = r
            .runs
            .iter()
            .find(|(f, _)| *f == r.which)
            .cloned()
            .expect("chosen face was run");
        let all: Vec<AsaResult> = r.runs.into_iter().map(|(_, a)| a).collect();
        (best, Some(face), all)
    } else {
        let r = asa_solve(&mut qp, &set, &x0, &cfg.asa, &cfg.spg, &cfg.rcgd)?;
        (r.clone(), None, vec![r])
    };
    if let Some(prefix) = trace {
        write_traces(prefix, &runs.iter().collect::<Vec<_>>())?;
    }
    let cycles: usize = runs.iter().map(|r| r.phases.entries.len()).sum();
    log::info!(
        "solve n = {}: {:?}, f = {:.6e}, |d1| = {:.2e}, {} phases",
        qp.n(),
        res.status,
        res.f,
        res.norm_d1,
        cycles
    );
    emit_json(
        &json!({
            "config": { "mode": mode, "asa": cfg.asa, "spg": cfg.spg, "rcgd": cfg.rcgd },
            "x": res.x,
            "f": res.f,
            "status": res.status,
            "which_face": which,
            "cycles": cycles,
            "norm_d1": res.norm_d1,
            "degenerate": res.degenerate,
            "n_f": runs.iter().map(|r| r.n_f).sum::<usize>(),
            "n_g": runs.iter().map(|r| r.n_g).sum::<usize>(),
            "phases": res.phases,
        }),
        out,
    )?;
    match res.status {
        AsaStatus::Converged => Ok(()),
        s => Err(CliError::Solver(format!("solver stopped without converging: {s:?}"))),
    }
}

fn cmd_gen(kind: GenKind, n: usize, seed: u64, hessian: HessianArg, set: SetArg, out: Option<&Path>) -> CliResult<()> {
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let value = match kind {
        GenKind::Qp => {
            let h = match hessian {
                HessianArg::DenseSpd => HessianKind::DenseSpd,
                HessianArg::Diagonal => HessianKind::Diagonal,
            };
            serde_json::to_value(make_random_qp(n, seed, h, set_kind(set))).expect("serializable")
        }
        GenKind::Projection => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (y, s) = mixed_instance(&mut rng, n, set_kind(set));
            json!({ "set": s, "y": y, "seed": seed })
        }
    };
    emit_json(&value, out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_topopt(
    grid: usize,
    r: f64,
    kalpha: f64,
    kbeta: f64,
    load: f64,
    maxiter: usize,
    driver: DriverArg,
    prefix: &Path,
) -> CliResult<()> {
    let problem = TopoProblem::uniform(grid, kalpha, kbeta, load, r).map_err(|e| CliError::Usage(e.to_string()))?;
    let cfg = TopoConfig {
        max_iter: maxiter,
        driver: match driver {
            DriverArg::Spg => TopoDriver::Spg,
            DriverArg::Asa => TopoDriver::Asa,
        },
        ..TopoConfig::default()
    };
    let w0 = vec![r; problem.cells()];
    let res = optimize_topology(&problem, &w0, &cfg)?;
    log::info!(
        "topopt {grid}x{grid}: {:?} after {} iterations, J = {:.6e}",
        res.status,
        res.iterations,
        res.j
    );

    if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
    }
    let grid_path = with_suffix(prefix, "_w.txt");
    let vtk_path = with_suffix(prefix, ".vtk");
    let hist_path = with_suffix(prefix, "_history.csv");
    topo_io::write_grid(&res.w, grid, create(&grid_path)?)?;
    topo_io::write_vtk(&[("w", &res.w), ("theta", &res.theta)], grid, create(&vtk_path)?)?;
    topo_io::write_history_csv(&res.history, create(&hist_path)?)?;
    emit_json(
        &json!({
            "config": {
                "grid": grid, "R": r, "kalpha": kalpha, "kbeta": kbeta, "load": load,
                "topopt": cfg,
            },
            "status": res.status,
            "iterations": res.iterations,
            "j": res.j,
            "j_initial": res.history.first().map(|h| h.j),
            "volume_residual": problem.volume_residual(&res.w),
            "pcg_iterations": res.pcg_iterations,
            "files": [grid_path, vtk_path, hist_path],
        }),
        None,
    )?;
    match res.status {
        TopoStatus::Converged | TopoStatus::Stationary => Ok(()),
        s => Err(CliError::Solver(format!(
            "design loop stopped without converging: {s:?}"
        ))),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Project { set, point, eps, out } => cmd_project(&set, &point, eps, out.as_deref()),
        Command::Solve {
            problem,
            mode,
            tol,
            max_cycles,
            trace,
            config,
            out,
        } => cmd_solve(
            &problem,
            mode,
            tol,
            max_cycles,
            trace.as_deref(),
            config.as_deref(),
            out.as_deref(),
        ),
        Command::Gen {
            kind,
            n,
            seed,
            hessian,
            set_kind,
            out,
        } => cmd_gen(kind, n, seed, hessian, set_kind, out.as_deref()),
        Command::Topopt {
            grid,
            r,
            kalpha,
            kbeta,
            load,
            maxiter,
            driver,
            out_prefix,
        } => cmd_topopt(grid, r, kalpha, kbeta, load, maxiter, driver, &out_prefix),
        Command::Bench {
            suite,
            sizes,
            seed,
            reps,
            jobs,
            out,
        } => {
            let sizes = bench::parse_sizes(&sizes)?;
            let csv = bench::run(suite, &sizes, seed, reps, jobs)?;
            emit_text(&csv, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("KNAPSACK_LOG", "error"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Solver(m)) => {
            eprintln!("solver error: {m}");
            ExitCode::from(1)
        }
    }
}
