//! `cgail-bench`: one-step simulations, stability audits, tabular gradient
//! flows and C-GAIL training sweeps driven by JSON configs.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical
//! divergence or a nonzero audit counterexample count.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
    Counterexamples(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Counterexamples(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
            CliError::Counterexamples(n) => write!(f, "audit found {n} counterexample(s)"),
        }
    }
}

#[derive(Parser)]
#[command(name = "cgail-bench", version, about = "Controlled GAIL dynamics laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the one-step system; one trajectory CSV per parameter tuple.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Locate equilibria of the one-step system by damped Newton.
    Equilibria {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stability audit over a parameter grid.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the tabular GAIL gradient flow.
    Flow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run C-GAIL training over seeds and sweep axes.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `name=v1,v2,...`; repeatable, combined as a cartesian product.
        #[arg(long)]
        sweep: Vec<String>,
    },
    /// Aggregate `summary_*.json` files from a directory.
    Aggregate {
        #[arg(long)]
        inputs: PathBuf,
        /// Directory for aggregate.json and aggregate.csv; defaults to `inputs`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config, out } => commands::simulate(config, out.as_deref()),
        Command::Equilibria { config, out } => commands::equilibria(config, out.as_deref()),
        Command::Audit { config, out } => commands::audit(config, out.as_deref()),
        Command::Flow { config, out } => commands::flow(config, out.as_deref()),
        Command::Train { config, out, sweep } => commands::train_cmd(config, out.as_deref(), sweep),
        Command::Aggregate { inputs, out } => commands::aggregate_cmd(inputs, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
