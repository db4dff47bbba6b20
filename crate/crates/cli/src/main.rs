use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{HammerArgs, NbodyArgs, PortraitArgs, ReconstructArgs, ReducedArgs, RigidArgs, VerifyArgs};

/// Symmetry reduction of small mechanical systems.
#[derive(Parser)]
#[command(name = "symred", version)]
struct Cli {
    /// JSON file with the subcommand's parameters; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Free rigid body: Euler equations, or full attitude motion with --full.
    SimulateRigid(RigidArgs),
    /// Near-intermediate-axis throw with flip and twist report.
    Hammer(HammerArgs),
    /// Reduced central-force dynamics on the invariants (w1, w2, w3).
    SimulateReduced(ReducedArgs),
    /// Rebuild the full orbit from a reduced one.
    Reconstruct(ReconstructArgs),
    /// Level sets of H on a symplectic leaf, as SVG or CSV.
    Portrait(PortraitArgs),
    /// k bodies in R^n reduced to the Gram-matrix coordinates.
    NbodyReduce(NbodyArgs),
    /// Run the invariant audit suite.
    Verify(VerifyArgs),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(symred::Error),
    Io(String),
    /// Checks ran but some failed.
    ChecksFailed(usize),
}

impl From<symred::Error> for CliError {
    fn from(e: symred::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    fn report(&self) {
        match self {
            CliError::Config(m) => eprintln!("error: {m}"),
            CliError::Io(m) => eprintln!("error: {m}"),
            CliError::ChecksFailed(n) => eprintln!("{n} check(s) failed"),
            CliError::Core(e) => {
                eprintln!("error: {e}");
                if let symred::Error::IntegrationFailed { time, state, .. } = e {
                    eprintln!("failing time: {time}");
                    eprintln!("failing state: {state:?}");
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    let outcome = match &cli.command {
        Command::SimulateRigid(a) => config::merge(a, cfg, "simulate-rigid").and_then(|a| commands::simulate_rigid(&a)),
        Command::Hammer(a) => config::merge(a, cfg, "hammer").and_then(|a| commands::hammer(&a)),
        Command::SimulateReduced(a) => {
            config::merge(a, cfg, "simulate-reduced").and_then(|a| commands::simulate_reduced(&a))
        }
        Command::Reconstruct(a) => config::merge(a, cfg, "reconstruct").and_then(|a| commands::reconstruct(&a)),
        Command::Portrait(a) => config::merge(a, cfg, "portrait").and_then(|a| commands::portrait(&a)),
        Command::NbodyReduce(a) => config::merge(a, cfg, "nbody-reduce").and_then(|a| commands::nbody_reduce(&a)),
        Command::Verify(a) => config::merge(a, cfg, "verify").and_then(|a| commands::verify(&a)),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}
