//! `qst`: simulate tomography data and reconstruct low-rank states by
//! penalized maximum likelihood.
//!
//! Exit codes: 0 success, 2 invalid input, 3 capacity exceeded, 4 solver
//! stopped without converging (outputs are still written).

mod bench;
mod certify;
mod gen_state;
mod measure;
mod report;
mod solve;
mod util;
mod validate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

#[derive(Parser)]
#[command(name = "qst", version, about = "Low-rank maximum-likelihood quantum state tomography")]
struct Cli {
    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// More log output (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a named target state to a JSON file.
    GenState(gen_state::GenStateArgs),
    /// Choose measurements and simulate their frequencies.
    Measure(measure::MeasureArgs),
    /// Fit a rank-r factor to a frequency table.
    Solve(solve::SolveArgs),
    /// Compute the optimality-gap bound of a saved factor.
    Certify(certify::CertifyArgs),
    /// Time the kernels and write a CSV of seconds per evaluation.
    Bench(bench::BenchArgs),
    /// Check any file written by this tool against its format.
    Validate(validate::ValidateArgs),
}

/// Successful runs that still deserve a distinct exit code.
pub enum Status {
    Done,
    NotConverged,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<qst::Error>() {
        Some(qst::Error::Capacity { .. }) => 3,
        _ => 2,
    }
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    let Some(t) = threads else { return Ok(()) };
    if t == 0 {
        anyhow::bail!(qst::Error::Validation("--threads must be at least 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    #[cfg(not(feature = "parallel"))]
    if t > 1 {
        log::warn!("built without the parallel feature; running on one thread");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::GenState(a) => gen_state::run(a),
        Command::Measure(a) => measure::run(a),
        Command::Solve(a) => solve::run(a),
        Command::Certify(a) => certify::run(a),
        Command::Bench(a) => bench::run(a),
        Command::Validate(a) => validate::run(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => "error",
        (false, 0) => "info",
        (false, 1) => "debug",
        (false, _) => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => ExitCode::from(4),
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
