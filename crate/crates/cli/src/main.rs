//! Command-line front end for the matrix-completion solver.
//!
//! Five subcommands cover the workflow end to end:
//!
//! * `prox` — tabulate the scalar thresholding curve of a penalty as CSV.
//! * `synth` — generate a synthetic low-rank completion problem as JSON.
//! * `solve` — run the solver on a problem file or a PGM image and dump
//!   the solution, the per-iteration trace, and a JSON summary.
//! * `experiment` — sweep a (q, lambda) grid, score every cell against the
//!   ground truth, and tabulate the results.
//! * `diagnose` — check stationarity and second-order conditions of a saved
//!   solution after the fact.
//!
//! Exit codes are stable: 0 on success, 2 on bad input or usage, 3 when the
//! solver hits its iteration cap without converging, 4 on numerical failure.
//! Every command is deterministic given its flags and seed.

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lrmc::Penalty;

/// Error carrying the process exit code alongside the message.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    /// Bad input or usage; exits with code 2.
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    /// Numerical breakdown; exits with code 4.
    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 4,
            message: message.into(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lrmc",
    version,
    about = "Low-rank matrix completion with spectral penalties"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the scalar thresholding curve prox(t) as CSV on stdout.
    Prox(ProxArgs),
    /// Generate a synthetic low-rank completion problem as a JSON file.
    Synth(SynthArgs),
    /// Run the solver on a problem file or a PGM image.
    Solve(SolveArgs),
    /// Sweep a (q, lambda) grid and tabulate recovery quality.
    Experiment(ExperimentArgs),
    /// Check stationarity and curvature conditions of a saved solution.
    Diagnose(DiagnoseArgs),
}

/// Penalty selection shared by several subcommands. Either name the family
/// with `--penalty` (hard, soft, lq — the latter needs `--q`), or give `--q`
/// alone: 0 means hard, 1 means soft, anything strictly between is lq.
#[derive(Args)]
struct PenaltyArgs {
    /// Penalty family: hard, soft, or lq.
    #[arg(long)]
    penalty: Option<String>,
    /// Exponent for the lq penalty; alone it also selects the family
    /// (0 = hard, 1 = soft).
    #[arg(long)]
    q: Option<f64>,
}

impl PenaltyArgs {
    fn resolve(&self) -> Result<Penalty, CliError> {
        match (self.penalty.as_deref(), self.q) {
            (Some("hard"), None) => Ok(Penalty::hard()),
            (Some("soft"), None) => Ok(Penalty::soft()),
            (Some("hard" | "soft"), Some(_)) => {
                Err(CliError::usage("--q only applies to --penalty lq"))
            }
            (Some("lq"), Some(q)) => {
                Penalty::lq(q).map_err(|e| CliError::usage(e.to_string()))
            }
            (Some("lq"), None) => Err(CliError::usage("--penalty lq requires --q")),
            (Some(other), _) => Err(CliError::usage(format!(
                "unknown penalty '{other}' (expected hard, soft, or lq)"
            ))),
            (None, Some(q)) => penalty_for_q(q),
            (None, None) => Err(CliError::usage("specify --penalty or --q")),
        }
    }
}

/// Map a grid exponent to a penalty: 0 is hard, 1 is soft, interior is lq.
pub fn penalty_for_q(q: f64) -> Result<Penalty, CliError> {
    if q == 0.0 {
        Ok(Penalty::hard())
    } else if q == 1.0 {
        Ok(Penalty::soft())
    } else {
        Penalty::lq(q).map_err(|e| CliError::usage(e.to_string()))
    }
}

#[derive(Args)]
struct ProxArgs {
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Prox parameter eta = L / lambda; must be positive.
    #[arg(long)]
    eta: f64,
    /// Left end of the sampled t range.
    #[arg(long, allow_negative_numbers = true)]
    from: f64,
    /// Right end of the sampled t range.
    #[arg(long, allow_negative_numbers = true)]
    to: f64,
    /// Number of evenly spaced sample points, at least 1.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of rows.
    #[arg(long)]
    m: usize,
    /// Number of columns.
    #[arg(long)]
    n: usize,
    /// Rank of the planted ground truth.
    #[arg(long)]
    rank: usize,
    /// Fraction of entries observed, strictly inside (0, 1).
    #[arg(long, default_value_t = 0.5)]
    obs: f64,
    /// Observed-entry SNR in dB; omit for noiseless data.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output problem file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV dump of the ground truth.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// JSON problem file, as written by `synth`.
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    problem: Option<PathBuf>,
    /// 8-bit binary PGM image to mask and complete.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Project the image onto a strictly low-rank truth before masking.
    #[arg(long, default_value_t = false)]
    strict_low_rank: bool,
    /// Fraction of the spectrum kept by --strict-low-rank.
    #[arg(long, default_value_t = 0.15)]
    keep_fraction: f64,
    /// Observed fraction when masking an image.
    #[arg(long, default_value_t = 0.5)]
    obs: f64,
    /// Observed-entry SNR in dB when masking an image; omit for noiseless.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Penalty weight.
    #[arg(long)]
    lambda: f64,
    /// Proximal parameter, strictly above 1.
    #[arg(long = "L", default_value_t = lrmc::solver::DEFAULT_PROXIMAL_PARAM)]
    proximal_param: f64,
    /// Normalized-step stopping tolerance.
    #[arg(long, default_value_t = lrmc::solver::DEFAULT_TOL)]
    tol: f64,
    /// Iteration cap.
    #[arg(long, default_value_t = lrmc::solver::DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Starting point: auto (penalty default), zero, or warm.
    #[arg(long, default_value = "auto")]
    init: String,
    /// Directory for the solution, trace, and summary artifacts.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the output directory from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the observed-entry SNR from the config.
    #[arg(long)]
    snr: Option<f64>,
    /// Override the observed fraction from the config.
    #[arg(long)]
    obs: Option<f64>,
    /// Override the stopping tolerance from the config.
    #[arg(long)]
    tol: Option<f64>,
    /// Override the iteration cap from the config.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Override the proximal parameter from the config.
    #[arg(long = "L")]
    proximal_param: Option<f64>,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Solution matrix CSV, as written by `solve`.
    #[arg(long)]
    solution: PathBuf,
    /// JSON problem file the solution answers.
    #[arg(long)]
    problem: PathBuf,
    /// Optional per-iteration trace CSV for rank-freeze reporting.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Penalty weight the solution was computed with.
    #[arg(long)]
    lambda: f64,
    /// Proximal parameter the solution was computed with.
    #[arg(long = "L", default_value_t = lrmc::solver::DEFAULT_PROXIMAL_PARAM)]
    proximal_param: f64,
    /// Tolerance used to judge stationarity and trace convergence.
    #[arg(long, default_value_t = lrmc::solver::DEFAULT_TOL)]
    tol: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Prox(args) => commands::prox(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Solve(args) => commands::solve(&args),
        Command::Experiment(args) => commands::experiment(&args),
        Command::Diagnose(args) => commands::diagnose(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {}", err.message);
            ExitCode::from(err.code)
        }
    }
}
