// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "pulseshaper",
    version,
    about = "Pulse-based switching analysis for bistable ODE models"
)]
struct Cli {
    /// Worker threads for sweeps and curve tracing. Defaults to the number of
    /// available cores; results do not depend on it.
    #[arg(long, global = true, env = "PULSESHAPER_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the pulsed flow and write the trajectory as CSV.
    Simulate(SimulateArgs),
    /// Locate both stable equilibria and report their spectra.
    FixedPoints(FixedPointsArgs),
    /// Evaluate the switching function on a (mu, tau) grid.
    SwitchMap(SwitchMapArgs),
    /// Trace level curves of the switching function and the separatrix.
    LevelSets(LevelSetsArgs),
    /// Sample the Kamke conditions for one or all orthant cones.
    MonotoneCheck(MonotoneArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Built-in model name or path to a JSON model config.
    #[arg(long)]
    model: String,
    /// Initial state as comma-separated values, or `source` / `target`.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    /// Pulse amplitude and duration as `mu,tau`.
    #[arg(long, default_value = "0,0")]
    pulse: String,
    #[arg(long)]
    t_end: f64,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Force the implicit stepper (the model's default otherwise).
    #[arg(long)]
    stiff: bool,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
}

#[derive(Args, Serialize)]
struct FixedPointsArgs {
    #[arg(long)]
    model: String,
    /// JSON file `{"source": [...], "target": [...]}` with Newton guesses.
    #[arg(long)]
    guesses: Option<PathBuf>,
    #[arg(long, default_value_t = pulseshaper::spectral::DEFAULT_NEWTON_TOL)]
    newton_tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SwitchMapArgs {
    #[arg(long)]
    model: String,
    /// Pulse amplitudes as `lo:hi:count`.
    #[arg(long, default_value = "0.05:20:40")]
    mu: String,
    /// Pulse durations as `lo:hi:count`.
    #[arg(long, default_value = "0.05:20:40")]
    tau: String,
    #[arg(long, default_value_t = pulseshaper::switching::DEFAULT_EPS)]
    eps: f64,
    /// Space both axes logarithmically.
    #[arg(long)]
    log_axes: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BranchArg {
    Lower,
    Upper,
    Both,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodArg {
    /// Monotone tracer for declared-monotone models with real dominant
    /// eigenvalue, grid contours otherwise.
    Auto,
    Monotone,
    Grid,
}

#[derive(Args, Serialize)]
struct LevelSetsArgs {
    #[arg(long)]
    model: String,
    /// Levels of |r|.
    #[arg(long, num_args = 1.., value_delimiter = ',', conflicts_with = "times")]
    alphas: Option<Vec<f64>>,
    /// Convergence times T, converted to alpha = eps * exp(|Re lambda1| T).
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = BranchArg::Both)]
    branch: BranchArg,
    /// Also trace the switching separatrix.
    #[arg(long)]
    separatrix: bool,
    /// Bisection tolerance in tau.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Amplitudes as `lo:hi:count`.
    #[arg(long, default_value = "0.05:20:30")]
    mu: String,
    /// Duration range as `lo:hi:count`; the bracket for tracing and the grid
    /// axis for contour extraction.
    #[arg(long, default_value = "0.05:20:40")]
    tau: String,
    #[arg(long, default_value_t = pulseshaper::switching::DEFAULT_EPS)]
    eps: f64,
    #[arg(long)]
    log_axes: bool,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    method: MethodArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct MonotoneArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = pulseshaper::monotone::DEFAULT_KAMKE_SAMPLES)]
    samples: usize,
    /// `auto` (all orthants), `standard`, `model` (the model's declared
    /// cone) or a signature such as `+,-,+`.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    cone: String,
    #[arg(long, default_value_t = pulseshaper::monotone::DEFAULT_KAMKE_TOL)]
    tol: f64,
    /// Inputs are sampled from [0, u_max].
    #[arg(long, default_value_t = 20.0)]
    u_max: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Why a command stopped; maps onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Numeric(String),
    /// Output was written but is incomplete.
    Partial(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Numeric(_) => 2,
            Failure::Partial(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Numeric(m) | Failure::Partial(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // --help and --version are not errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let started = Instant::now();
    let result = build_pool(cli.jobs).and_then(|pool| pool.install(|| commands::run(&cli.command, started)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("pulseshaper: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn build_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, Failure> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    match jobs {
        Some(0) => return Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(n) => builder = builder.num_threads(n),
        None => {}
    }
    builder.build().map_err(|e| Failure::Numeric(format!("cannot start worker threads: {e}")))
}
