//! Command-line front end: generate combs, simulate designed experiments,
//! reconstruct, tabulate truncation bounds, and compare processes.
//!
//! Every command is deterministic given its flags; randomized commands take
//! an explicit seed and record it in the output metadata. Exit codes are
//! stable: 0 success, 2 input error, 3 design or model error, 4 numerical
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "combtomo", version, about = "Sequential process tomography and truncation bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random comb and write it as JSON
    #[command(name = "gen-comb")]
    GenComb(GenCombArgs),
    /// Design experiments against a comb and record their outcomes
    Simulate(SimulateArgs),
    /// Reconstruct a comb from recorded experiments
    Tomograph(TomographArgs),
    /// Tabulate worst-case truncation distances over a purity grid
    Bound(BoundArgs),
    /// Compare two combs by distance, fidelity, or designed probabilities
    Metrics(MetricsArgs),
    /// Sweep shot budgets and report reconstruction quality per seed
    Scaling(ScalingArgs),
}

#[derive(Args)]
struct GenCombArgs {
    /// Number of time steps
    #[arg(long)]
    steps: usize,
    /// Input dimension per step, comma separated
    #[arg(long, value_name = "D,D,..")]
    in_dims: String,
    /// Output dimension per step, comma separated
    #[arg(long, value_name = "D,D,..")]
    out_dims: String,
    /// Ancilla dimensions: N+1 values, or N values with the leading 1 implied
    #[arg(long, value_name = "D,D,..")]
    anc_dims: String,
    #[arg(long)]
    seed: u64,
    /// Output comb JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Comb JSON file to act as the ground truth
    #[arg(long)]
    comb: PathBuf,
    /// Shot budget per record (omit for exact probabilities)
    #[arg(long, conflicts_with = "exact")]
    shots: Option<u64>,
    /// Record exact probabilities instead of sampled counts
    #[arg(long)]
    exact: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// "auto" derives the design from the comb; otherwise a design JSON path
    #[arg(long, default_value = "auto")]
    design: String,
    /// Output records JSON path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TomographArgs {
    /// Records JSON file
    #[arg(long)]
    records: PathBuf,
    /// "default" for the built-in single-qubit set, or a JSON file of states
    #[arg(long, default_value = "default")]
    preps: String,
    /// "default" for the built-in single-qubit set, or a JSON file of effects
    #[arg(long, default_value = "default")]
    meas: String,
    /// Model ancilla dimensions: N+1 values, or N with the leading 1 implied
    #[arg(long, value_name = "D,D,..")]
    anc_dims: String,
    /// Optimizer config JSON (fields optional); omit for the tuned default
    #[arg(long)]
    opt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the recovered comb; step reports land next to it
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    /// Hilbert space dimension of the truncated state
    #[arg(long)]
    dim: usize,
    /// Normalized purity grid as start:end:count, endpoints included
    #[arg(long, value_name = "A:B:N")]
    purity_grid: String,
    /// Truncation ranks, comma separated
    #[arg(long, value_name = "R,R,..")]
    ranks: String,
    /// State trace; distances scale with its square
    #[arg(long, default_value_t = 1.0)]
    trace: f64,
    /// Monte Carlo samples per row for the worst-case search (0 disables)
    #[arg(long, default_value_t = 0)]
    oracle_samples: usize,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// First comb JSON file
    #[arg(long)]
    a: PathBuf,
    /// Second comb JSON file
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum)]
    which: WhichMetric,
    /// Instrument design JSON for relcost; omit for the full default design
    #[arg(long)]
    design: Option<PathBuf>,
    /// Sidecar JSON path; defaults to the first comb's path with a
    /// metrics.json extension
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WhichMetric {
    /// Hilbert-Schmidt distance of the Choi operators
    Hs,
    /// Uhlmann fidelity of the normalized Choi operators
    Fidelity,
    /// Summed squared probability gap over an instrument design
    Relcost,
}

#[derive(Args)]
struct ScalingArgs {
    /// Truth comb JSON file
    #[arg(long)]
    comb: PathBuf,
    /// Shot budgets, comma separated; scientific notation and the token
    /// "exact" are accepted
    #[arg(long, value_name = "N,N,..")]
    shots_list: String,
    /// Number of seeds per budget (seeds run 0..count)
    #[arg(long)]
    seeds: u64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

/// Errors bucketed by exit code.
pub enum CliError {
    /// Bad flags, files, or dimensions: exit 2.
    Input(String),
    /// Unreachable design or model misfit the pipeline cannot express: exit 3.
    Design(String),
    /// Numerical failure inside linear algebra or optimization: exit 4.
    Numeric(String),
}

impl CliError {
    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Design(m) | CliError::Numeric(m) => m,
        }
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Design(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<combtomo::comb::CombError> for CliError {
    fn from(e: combtomo::comb::CombError) -> Self {
        use combtomo::comb::CombError::*;
        match e {
            Linalg(inner) => CliError::Numeric(inner.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<combtomo::bounds::BoundError> for CliError {
    fn from(e: combtomo::bounds::BoundError) -> Self {
        use combtomo::bounds::BoundError::*;
        match e {
            Linalg(inner) => CliError::Numeric(inner.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<combtomo::tomo::TomoError> for CliError {
    fn from(e: combtomo::tomo::TomoError) -> Self {
        use combtomo::tomo::TomoError::*;
        match e {
            RankDeficientDesign { .. } | BadDesign(_) | MissingRecord { .. } | Misalignment(_) => {
                CliError::Design(e.to_string())
            }
            Linalg(inner) => CliError::Numeric(inner.to_string()),
            Stiefel(inner) => CliError::Numeric(inner.to_string()),
            Comb(inner) => inner.into(),
            Bound(inner) => inner.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenComb(args) => commands::gen_comb(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Tomograph(args) => commands::tomograph(&args),
        Command::Bound(args) => commands::bound(&args),
        Command::Metrics(args) => commands::metrics(&args),
        Command::Scaling(args) => commands::scaling(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
