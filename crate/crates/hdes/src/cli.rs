//! The `hdes` command line: solve problems, validate and export results,
//! and build solver performance profiles.
//!
//! Exit codes: 0 on success, 2 for input errors (unreadable or malformed
//! files, empty inputs), 3 for runtime failures. Diagnostics go to stderr;
//! stdout carries only data.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::loss::BoundaryStrategy;
use crate::problem::{parse_problem, DESystem};
use crate::solver::{
    multi_start_with_path, solve_with_path, MultiStartSummary, PerFunction, SolveResult,
    SolverConfig,
};
use crate::validate::{
    default_tau_grid, performance_profile, performance_ratio, rk4_reference, score_solution,
    ReferenceSolution, ScoreReport,
};

const EXIT_INPUT: i32 = 2;
const EXIT_RUNTIME: i32 = 3;

#[derive(Parser)]
#[command(name = "hdes", version, about = "Variational spectral solver for differential equations")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem file and write the result JSON.
    Solve(SolveArgs),
    /// Score a result against a reference solution.
    Validate(ValidateArgs),
    /// Export solution curves as CSV.
    Curve(CurveArgs),
    /// Build performance-profile curves from a directory of score files.
    Profile(ProfileArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Problem file (.hde).
    problem: PathBuf,
    /// Total qubits per function: a number, or per-function overrides like
    /// `4,g=5`.
    #[arg(long, default_value = "4")]
    qubits: String,
    /// Circuit depth, same syntax as --qubits.
    #[arg(long, default_value = "3")]
    depth: String,
    /// Number of collocation samples.
    #[arg(long, default_value_t = 20)]
    samples: usize,
    #[arg(long = "max-iter", default_value_t = 500)]
    max_iter: usize,
    /// Target loss; optimization stops early once reached.
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Boundary penalty weight.
    #[arg(long, default_value_t = 10.0)]
    eta: f64,
    #[arg(long, value_enum, default_value_t = StrategyArg::Penalty)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Measurement shots per evaluation; 0 uses exact probabilities.
    #[arg(long, default_value_t = 0)]
    shots: u64,
    /// Independent restarts with consecutive seeds.
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StrategyArg {
    Penalty,
    Floating,
    Tangential,
}

impl From<StrategyArg> for BoundaryStrategy {
    fn from(value: StrategyArg) -> Self {
        match value {
            StrategyArg::Penalty => BoundaryStrategy::Penalty,
            StrategyArg::Floating => BoundaryStrategy::Floating,
            StrategyArg::Tangential => BoundaryStrategy::Tangential,
        }
    }
}

#[derive(Args)]
struct ValidateArgs {
    /// Result JSON produced by `hdes solve`.
    result: PathBuf,
    /// Use an RK4 integration of the problem as the reference.
    #[arg(long, conflicts_with = "reference")]
    rk4: bool,
    /// CSV table with columns `x,f[,f:1,...]` as the reference.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Problem file override; defaults to the path echoed in the result.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Validation grid size.
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// RK4 step size.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    /// Result JSON produced by `hdes solve`.
    result: PathBuf,
    /// Grid size for the exported curve.
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Add reference columns from an RK4 integration of the problem.
    #[arg(long, conflicts_with = "reference")]
    rk4: bool,
    /// Add reference columns from a CSV table.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    problem: Option<PathBuf>,
    /// RK4 step size.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProfileArgs {
    /// Directory of score files named `<solver>__<problem>.json`.
    dir: PathBuf,
    /// Scores above this threshold count as unsolved.
    #[arg(long, default_value_t = 5e-2)]
    threshold: f64,
    /// Ratio assigned to unsolved problems.
    #[arg(long = "r-max", default_value_t = 1e6)]
    r_max: f64,
    /// Which component of the validation score to rank by (0 = max error,
    /// 1 = mean squared error).
    #[arg(long, default_value_t = 0)]
    component: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Result JSON of a multi-start run: the best run plus the summary.
#[derive(Serialize, Deserialize)]
pub struct MultiStartReport {
    pub best: SolveResult,
    pub summary: MultiStartSummary,
}

type CmdResult = Result<(), (i32, String)>;

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Curve(args) => cmd_curve(args),
        Command::Profile(args) => cmd_profile(args),
    }
}

fn fail(code: i32, msg: impl Into<String>) -> (i32, String) {
    (code, msg.into())
}

fn classify(err: Error) -> (i32, String) {
    match &err {
        Error::Parse { .. } | Error::Io(_) => fail(EXIT_INPUT, err.to_string()),
        _ => fail(EXIT_RUNTIME, err.to_string()),
    }
}

fn read_file(path: &Path) -> Result<String, (i32, String)> {
    fs::read_to_string(path)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot read `{}`: {e}", path.display())))
}

fn load_problem(path: &Path) -> Result<DESystem, (i32, String)> {
    let text = read_file(path)?;
    parse_problem(&text)
        .map_err(|e| fail(EXIT_INPUT, format!("{}:{e}", path.display())))
}

fn write_output(out: Option<&Path>, data: &str) -> CmdResult {
    match out {
        Some(path) => fs::write(path, data)
            .map_err(|e| fail(EXIT_RUNTIME, format!("cannot write `{}`: {e}", path.display()))),
        None => {
            print!("{data}");
            if !data.ends_with('\n') {
                println!();
            }
            Ok(())
        }
    }
}

fn parse_per_function(spec: &str, system: &DESystem) -> Result<PerFunction, (i32, String)> {
    let mut per = PerFunction::uniform(0);
    let mut have_default = false;
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        match part.split_once('=') {
            Some((name, value)) => {
                let name = name.trim();
                if system.function_index(name).is_none() {
                    return Err(fail(
                        EXIT_INPUT,
                        format!("override names unknown function `{name}`"),
                    ));
                }
                let value: u32 = value.trim().parse().map_err(|_| {
                    fail(EXIT_INPUT, format!("bad value in per-function spec `{part}`"))
                })?;
                per.overrides.insert(name.to_string(), value);
            }
            None => {
                per.default = part
                    .parse()
                    .map_err(|_| fail(EXIT_INPUT, format!("bad count `{part}`")))?;
                have_default = true;
            }
        }
    }
    if !have_default {
        // Overrides only: every function must be covered.
        for f in &system.functions {
            if !per.overrides.contains_key(&f.name) {
                return Err(fail(
                    EXIT_INPUT,
                    format!("no qubit/depth setting for function `{}`", f.name),
                ));
            }
        }
    }
    Ok(per)
}

fn cmd_solve(args: SolveArgs) -> CmdResult {
    let system = load_problem(&args.problem)?;
    let config = SolverConfig {
        qubits: parse_per_function(&args.qubits, &system)?,
        depth: parse_per_function(&args.depth, &system)?,
        n_samples: args.samples,
        max_iterations: args.max_iter,
        epsilon: args.epsilon,
        eta: args.eta,
        strategy: args.strategy.into(),
        seed: args.seed,
        shots: args.shots,
    };
    let path_str = args.problem.display().to_string();
    let json = if args.restarts > 1 {
        let (runs, summary) = multi_start_with_path(&system, &config, args.restarts, Some(&path_str))
            .map_err(classify)?;
        let best = runs
            .into_iter()
            .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss))
            .expect("at least one restart");
        serde_json::to_string_pretty(&MultiStartReport { best, summary })
    } else {
        let result = solve_with_path(&system, &config, Some(&path_str)).map_err(classify)?;
        serde_json::to_string_pretty(&result)
    }
    .map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
    write_output(args.out.as_deref(), &json)
}

/// Accept either a bare result or a multi-start report (using its best run).
pub fn load_result(path: &Path) -> Result<SolveResult, (i32, String)> {
    let text = read_file(path)?;
    if let Ok(report) = serde_json::from_str::<MultiStartReport>(&text) {
        return Ok(report.best);
    }
    serde_json::from_str::<SolveResult>(&text)
        .map_err(|e| fail(EXIT_INPUT, format!("`{}` is not a result file: {e}", path.display())))
}

fn resolve_problem(
    explicit: Option<&Path>,
    result: &SolveResult,
) -> Result<DESystem, (i32, String)> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(result.config_echo.problem_path.as_deref().ok_or_else(|| {
            fail(
                EXIT_INPUT,
                "result does not record its problem file; pass --problem",
            )
        })?),
    };
    load_problem(&path)
}

fn build_reference(
    rk4: bool,
    reference: Option<&Path>,
    system: &DESystem,
    step: f64,
) -> Result<ReferenceSolution, (i32, String)> {
    if rk4 {
        rk4_reference(system, step).map_err(classify)
    } else if let Some(table) = reference {
        let text = read_file(table)?;
        ReferenceSolution::from_table_csv(&text)
            .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", table.display())))
    } else {
        Err(fail(EXIT_INPUT, "pass --rk4 or --reference <table.csv>"))
    }
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    let result = load_result(&args.result)?;
    let system = resolve_problem(args.problem.as_deref(), &result)?;
    let reference = build_reference(args.rk4, args.reference.as_deref(), &system, args.step)?;
    let report = score_solution(&system, &result, &reference, args.points).map_err(classify)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| fail(EXIT_RUNTIME, e.to_string()))?;
    write_output(args.out.as_deref(), &json)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_curve(args: CurveArgs) -> CmdResult {
    let result = load_result(&args.result)?;
    let echo = &result.config_echo;
    if echo.variables.is_empty() {
        return Err(fail(EXIT_INPUT, "result echoes no variables"));
    }
    let domains: Vec<crate::problem::Domain> = echo
        .variables
        .iter()
        .map(|v| crate::problem::Domain { lo: v.lo, hi: v.hi })
        .collect();
    let grid = crate::loss::generate_samples(args.points, &domains).map_err(classify)?;

    let reference = if args.rk4 || args.reference.is_some() {
        let system = resolve_problem(args.problem.as_deref(), &result)?;
        Some((
            build_reference(args.rk4, args.reference.as_deref(), &system, args.step)?,
            system,
        ))
    } else {
        None
    };

    let mut header: Vec<String> = echo.variables.iter().map(|v| v.name.clone()).collect();
    for f in &result.functions {
        header.push(f.name.clone());
    }
    if reference.is_some() {
        for f in &result.functions {
            header.push(format!("ref_{}", f.name));
        }
    }
    let mut csv = header.join(",");
    csv.push('\n');

    let expansions: Vec<_> = result.functions.iter().map(|f| f.expansion()).collect();
    for point in &grid {
        let mut row: Vec<String> = point.iter().map(|&x| fmt17(x)).collect();
        for (f, expansion) in result.functions.iter().zip(&expansions) {
            let coords = project(point, &f.name, echo);
            let value = expansion.value(&coords).map_err(classify)?;
            row.push(fmt17(value));
        }
        if let Some((reference, _)) = &reference {
            for f in &result.functions {
                let coords = project(point, &f.name, echo);
                let value = reference.eval(&f.name, coords[0], 0).map_err(classify)?;
                row.push(fmt17(value));
            }
        }
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write_output(args.out.as_deref(), &csv)
}

/// Coordinates of `point` restricted to the variables of `func`.
fn project(point: &[f64], func: &str, echo: &crate::solver::ConfigEcho) -> Vec<f64> {
    match echo.function_vars.get(func) {
        Some(vars) => vars
            .iter()
            .map(|name| {
                let idx = echo.variables.iter().position(|v| &v.name == name).unwrap_or(0);
                point[idx]
            })
            .collect(),
        None => point.to_vec(),
    }
}

fn cmd_profile(args: ProfileArgs) -> CmdResult {
    if args.component > 1 {
        return Err(fail(EXIT_INPUT, "--component must be 0 or 1"));
    }
    let entries = fs::read_dir(&args.dir)
        .map_err(|e| fail(EXIT_INPUT, format!("cannot read `{}`: {e}", args.dir.display())))?;
    // (solver, problem) → scalar score.
    let mut scores: BTreeMap<(String, String), f64> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let Some((solver, problem)) = stem.split_once("__") else {
            return Err(fail(
                EXIT_INPUT,
                format!("`{}` is not named <solver>__<problem>.json", path.display()),
            ));
        };
        let report: ScoreReport = serde_json::from_str(&read_file(&path)?)
            .map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", path.display())))?;
        let value = if args.component == 0 { report.global.0 } else { report.global.1 };
        scores.insert((solver.to_string(), problem.to_string()), value);
    }
    if scores.is_empty() {
        return Err(fail(
            EXIT_INPUT,
            format!("no score files in `{}`", args.dir.display()),
        ));
    }
    let mut solvers: Vec<String> = scores.keys().map(|(s, _)| s.clone()).collect();
    solvers.sort();
    solvers.dedup();
    let mut problems: Vec<String> = scores.keys().map(|(_, p)| p.clone()).collect();
    problems.sort();
    problems.dedup();
    for solver in &solvers {
        for problem in &problems {
            if !scores.contains_key(&(solver.clone(), problem.clone())) {
                return Err(fail(
                    EXIT_INPUT,
                    format!("missing score for solver `{solver}` on problem `{problem}`"),
                ));
            }
        }
    }

    // Ratios per problem, then one profile curve per solver.
    let mut ratios: Vec<Vec<f64>> = vec![Vec::new(); solvers.len()];
    for problem in &problems {
        let column: Vec<f64> = solvers
            .iter()
            .map(|s| scores[&(s.clone(), problem.clone())])
            .collect();
        let row = performance_ratio(&column, args.threshold, args.r_max).map_err(classify)?;
        for (si, r) in row.into_iter().enumerate() {
            ratios[si].push(r);
        }
    }
    let grid = default_tau_grid(&ratios, args.r_max);
    let mut csv = String::from("tau,solver,rho\n");
    for (si, solver) in solvers.iter().enumerate() {
        let rho = performance_profile(&ratios[si], &grid).map_err(classify)?;
        for (tau, r) in grid.iter().zip(rho) {
            csv.push_str(&format!("{},{solver},{}\n", fmt17(*tau), fmt17(r)));
        }
    }
    write_output(args.out.as_deref(), &csv)
}
