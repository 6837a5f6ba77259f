//! Batch operator interface for the planning engine.
//!
//! Exit codes: 0 success, 2 infeasible model, 3 validation error,
//! 4 enumeration/size guard exceeded, 5 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridshift_cli::config::Invocation;
use gridshift_cli::{commands, CliError};

#[derive(Parser)]
#[command(
    name = "gridshift",
    about = "Carbon-aware siting and dispatch for geographically shiftable loads",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// run configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// override the search seed
    #[arg(long)]
    seed: Option<u64>,
    /// override the round budget K_max
    #[arg(long)]
    rounds: Option<usize>,
    /// wall-clock budget in seconds
    #[arg(long, value_name = "SECONDS")]
    time_budget: Option<f64>,
    /// output directory (default: <config dir>/out)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the no-shifting DC-OPF baseline and write the cost caps
    Baseline(CommonArgs),
    /// Search for the best shiftable-load locations and write the plan report
    Plan(CommonArgs),
    /// Exhaustively evaluate every candidate location vector (desk scale)
    Enumerate(CommonArgs),
    /// Render a human-readable summary and plot data from existing artifacts
    Report(CommonArgs),
    /// Generate a synthetic scenario CSV from the config
    Synth(CommonArgs),
}

impl Command {
    fn args(&self) -> &CommonArgs {
        match self {
            Command::Baseline(a)
            | Command::Plan(a)
            | Command::Enumerate(a)
            | Command::Report(a)
            | Command::Synth(a) => a,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let args = cli.command.args();
    let inv = Invocation::load(
        &args.config,
        args.out.as_deref(),
        args.seed,
        args.rounds,
        args.time_budget,
    )?;
    if inv.workers > 0 {
        // ignore the error: the pool may already be initialized in-process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(inv.workers).build_global();
    }
    match &cli.command {
        Command::Baseline(_) => commands::cmd_baseline(&inv),
        Command::Plan(_) => commands::cmd_plan(&inv),
        Command::Enumerate(_) => commands::cmd_enumerate(&inv),
        Command::Report(_) => commands::cmd_report(&inv),
        Command::Synth(_) => commands::cmd_synth(&inv),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
