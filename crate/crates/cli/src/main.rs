use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orbgov_cli::{compare_backends, resolve, run, CliError, RunOptions};
use orbgov_core::Backend;

/// Governed low-thrust orbit transfers.
#[derive(Parser)]
#[command(name = "orbgov", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv, events.csv and summary.toml.
    Run(Common),
    /// Run the Lyapunov-set and prediction backends side by side.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a bundled scenario (geo-lower, leo-raise, smoke).
    scenario: String,
    /// Output directory [default: the scenario's output.dir, else runs/<name>].
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the scenario's backend (lyapunov-set, prediction, off).
    #[arg(long)]
    backend: Option<Backend>,
    /// Override the simulated duration, s.
    #[arg(long)]
    t_end: Option<f64>,
    /// Refuse to run if any code path could draw random numbers.
    #[arg(long)]
    seedless: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out_dir.clone(),
            backend: self.backend,
            t_end: self.t_end,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let (Command::Run(c) | Command::Compare(c)) = &cli.command;
    if c.seedless && !orbgov_core::RNG_FREE {
        return Err(CliError::Parse("--seedless: the simulation path uses an RNG".into()));
    }
    let scenario = resolve(&c.scenario)?;
    let opts = c.options();
    match &cli.command {
        Command::Run(_) => {
            let out = run(&scenario, &opts)?;
            let s = &out.summary;
            println!(
                "{}: {} at t = {:.1} s, dV = {:.6} km/s, artifacts in {}",
                s.scenario,
                s.status,
                s.t_final,
                s.delta_v,
                out.dir.display()
            );
        }
        Command::Compare(_) => {
            let out = compare_backends(&scenario, &opts)?;
            print!("{}", out.comparison.table());
            for (_, r) in out.results {
                r?.into_result()?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("orbgov: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
