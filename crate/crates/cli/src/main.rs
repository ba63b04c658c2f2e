//! `qtmin`: bounds, protocols, simulations, extremals and grid estimates for
//! minimum-time transfer of a dissipative qubit.
//!
//! Every subcommand reads one JSON config, prints a JSON report on stdout and
//! writes its CSV or schedule files into the output directory, if one is set.
//! Exit codes: 0 success, 2 partial (no upper bound), 3 unreachable, 1 error.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Failure, Outcome};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "qtmin", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lower and upper bounds on the transfer time.
    Bounds(RunArgs),
    /// Three-phase protocol with its validation report.
    Protocol(RunArgs),
    /// Integrate a control schedule from the start state.
    Simulate(RunArgs),
    /// Solve the two-point problem by shooting on Pontryagin extremals.
    Extremal(RunArgs),
    /// Grid estimate of the minimal time with a refinement study.
    Oracle(RunArgs),
    /// Bounds over a grid of initial and final purities.
    Figure1(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

type Handler = fn(&RunConfig) -> Result<Outcome, Failure>;

fn run(cli: Cli) -> Result<Outcome, Failure> {
    let (args, cmd): (&RunArgs, Handler) = match &cli.command {
        Command::Bounds(a) => (a, commands::bounds),
        Command::Protocol(a) => (a, commands::protocol),
        Command::Simulate(a) => (a, commands::simulate),
        Command::Extremal(a) => (a, commands::extremal),
        Command::Oracle(a) => (a, commands::oracle),
        Command::Figure1(a) => (a, commands::figure1),
    };
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(out) = &args.out {
        cfg.output.dir = Some(out.clone());
    }
    let outcome = cmd(&cfg)?;
    if let Some(dir) = &cfg.output.dir {
        for (name, bytes) in &outcome.files {
            commands::write_atomic(dir, name, bytes).map_err(|e| {
                Failure::error(format!("cannot write {}: {e}", dir.join(name).display()))
            })?;
        }
        let mut report = outcome.report.clone().into_bytes();
        report.push(b'\n');
        commands::write_atomic(dir, "report.json", &report)
            .map_err(|e| Failure::error(format!("cannot write report: {e}")))?;
    }
    Ok(outcome)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            // A closed pipe downstream is not an error of ours.
            let _ = writeln!(std::io::stdout().lock(), "{}", out.report);
            if out.code == commands::EXIT_PARTIAL {
                eprintln!("warning: target radius exceeds the feasibility cap; only the lower bound applies");
            }
            ExitCode::from(out.code)
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
