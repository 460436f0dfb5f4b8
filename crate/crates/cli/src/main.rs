mod commands;
mod config;
mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qinterf::exec::{init_threads, Backend};

use commands::{CliError, Command};
use config::RunConfig;
use output::Format;

/// Simulate and plan a memory-assisted two-telescope interferometer.
#[derive(Debug, Parser)]
#[command(name = "qinterf", version)]
struct Cli {
    /// TOML file with `key = value` settings for the subcommand
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed; overrides `seed` in the config file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write results here instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Worker threads; 1 runs the sequential backend
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Monte Carlo estimation campaign for g
    Simulate,
    /// Fisher information versus epsilon for several block lengths
    FisherCurve,
    /// Optimal block length and pair cost over an epsilon grid
    Optimize,
    /// Entanglement lower bound per detected photon
    Entropy,
    /// Resource report for an observatory configuration
    Resources,
}

impl From<&Cmd> for Command {
    fn from(c: &Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::FisherCurve => Command::FisherCurve,
            Cmd::Optimize => Command::Optimize,
            Cmd::Entropy => Command::Entropy,
            Cmd::Resources => Command::Resources,
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::empty(),
    };
    let job = commands::build((&cli.command).into(), &mut cfg, cli.seed)?;

    let backend = match cli.threads {
        Some(0) => return Err(config::ConfigError::Missing("--threads must be at least 1".into()).into()),
        Some(1) => Backend::Sequential,
        Some(n) => {
            init_threads(n).map_err(CliError::Numerical)?;
            Backend::Parallel
        }
        None => Backend::default(),
    };

    let table = commands::run(&job, backend)?;
    match &cli.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            table.write(cli.format, &mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            table.write(cli.format, stdout.lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
