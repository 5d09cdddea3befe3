use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod manifest;

/// Exit statuses shared by all subcommands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    ConfigError = 2,
    AssertionFailure = 3,
    NumericalFault = 4,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        ExitCode::from(s as u8)
    }
}

/// Error carrying the exit status it maps to.
#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { status: Status::ConfigError, message: message.into() }
    }

    pub fn from_core(err: feskit::FesError) -> Self {
        let status = match err {
            feskit::FesError::Config(_) => Status::ConfigError,
            _ => Status::NumericalFault,
        };
        CliError { status, message: err.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "feskit", version, about = "Run feedback equilibrium seeking scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trace.csv, dense.csv, summary.json,
    /// certificate.json and manifest.json into the output directory.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        substeps: Option<usize>,
    },
    /// Run one configuration per parameter value and print a summary table.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        /// Also write sweep.csv and manifest.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the stability certificate and print it as JSON.
    Certify {
        config: PathBuf,
        /// Also write certificate.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, substeps } => commands::run(&config, &out, seed, substeps),
        Command::Sweep { config, param, values, out } => commands::sweep(&config, &param, &values, out.as_deref()),
        Command::Certify { config, out } => commands::certify(&config, out.as_deref()),
    };
    match result {
        Ok(status) => status.into(),
        Err(err) => {
            eprintln!("error: {}", err.message);
            err.status.into()
        }
    }
}
