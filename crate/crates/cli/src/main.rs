use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qstab_cli::{commands, resolve, CliError, ConfigArgs};

#[derive(Parser)]
#[command(
    name = "qstab",
    version,
    about = "Switching feedback stabilization experiments"
)]
struct Cli {
    /// Worker threads for ensembles (defaults to one per core)
    #[arg(long, global = true, env = "QSTAB_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample paths under the configured control, one CSV each
    Simulate(ConfigArgs),
    /// Monte Carlo mean distance and convergence fraction
    Ensemble(ConfigArgs),
    /// First-exit times from the far region under constant drive
    ExitTime(ConfigArgs),
    /// Ensemble-average dynamics under a constant input
    Ode(ConfigArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Simulate(args) => commands::simulate(&resolve(&args)?).map(|_| ()),
        Command::Ensemble(args) => commands::ensemble(&resolve(&args)?),
        Command::ExitTime(args) => commands::exit_time(&resolve(&args)?),
        Command::Ode(args) => commands::ode(&resolve(&args)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qstab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
