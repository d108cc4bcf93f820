use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use micropolar_cli::commands::{cmd_certify, cmd_lagrangian, cmd_run, cmd_stability, load_config, EXIT_ERROR};

/// Environment variable naming the worker-thread count. Results never depend on it.
const THREADS_VAR: &str = "MICROPOLAR_THREADS";

#[derive(Parser)]
#[command(name = "micropolar", version, about = "Micropolar fluid simulator and verification suite")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the constants and certificates of the initial data.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a simulation and write diagnostics and snapshots.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate the flow map of a stored run and evaluate Lagrangian residuals.
    Lagrangian {
        /// Directory written by `run`.
        run_dir: PathBuf,
        /// Final time of the analysis window.
        #[arg(long)]
        window: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Proceed even if the budget exceeds 1/2 inside the window.
        #[arg(long)]
        force: bool,
    },
    /// Paired runs differing by a Taylor-Green velocity perturbation.
    Stability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Coefficient of the perturbing Taylor-Green mode.
        #[arg(long, default_value_t = 1e-6)]
        perturbation: f64,
    },
}

fn threads() -> anyhow::Result<usize> {
    match std::env::var(THREADS_VAR) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => anyhow::bail!("{THREADS_VAR} must be a positive integer, got '{v}'"),
        },
        Err(_) => Ok(1),
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    // Every kernel runs on the calling thread, so the count only needs validating.
    threads()?;
    let (text, code) = match cli.command {
        Command::Certify { config } => cmd_certify(&load_config(&config)?)?,
        Command::Run { config, out } => {
            let r = cmd_run(&load_config(&config)?, out.as_deref())?;
            (format!("directory: {}\n{}\n", r.directory.display(), r.message.trim_end()), r.exit)
        }
        Command::Lagrangian { run_dir, window, out, force } => cmd_lagrangian(&run_dir, window, force, out.as_deref())?,
        Command::Stability { config, out, perturbation } => {
            cmd_stability(&load_config(&config)?, perturbation, out.as_deref())?
        }
    };
    print!("{text}");
    Ok(code)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
