mod commands;
mod config;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use commands::fit::FitOptions;
use config::{Criterion, Loaded, Overrides};
use error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Simulate,
    Fit,
    Postprocess,
    Forecast,
    Score,
}

/// Structured Bayesian factor models.
#[derive(Parser, Debug)]
#[command(name = "structfactor", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Fit directory read by postprocess, forecast and score.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Fix the truncation level and disable adaptation.
    #[arg(long = "fixed-h")]
    fixed_h: Option<usize>,
    #[arg(long, value_enum)]
    criterion: Option<Criterion>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Continue chains from their checkpoints.
    #[arg(long)]
    resume: bool,
    /// Stop each chain after this many iterations, leaving a checkpoint.
    #[arg(long = "stop-after")]
    stop_after: Option<usize>,
}

fn input(cli: &Cli) -> CliResult<&PathBuf> {
    cli.input.as_ref().ok_or_else(|| CliError::Validation("--input <fit directory> is required".into()))
}

fn run(cli: &Cli) -> CliResult<()> {
    let overrides = Overrides {
        seed: cli.seed,
        chains: cli.chains,
        threads: cli.threads,
        fixed_h: cli.fixed_h,
        criterion: cli.criterion,
        epsilon: cli.epsilon,
        t: cli.t,
        horizon: cli.horizon,
    };
    let cfg = Loaded::from_file(&cli.config, &overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate::run(&cfg, &cli.output),
        Command::Fit => {
            commands::fit::run(&cfg, &cli.output, &FitOptions { resume: cli.resume, stop_after: cli.stop_after })
        }
        Command::Postprocess => commands::postprocess::run(&cfg, input(cli)?, &cli.output),
        Command::Forecast => commands::forecast::run(&cfg, input(cli)?, &cli.output),
        Command::Score => commands::score::run(&cfg, cli.input.as_deref(), &cli.output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("structfactor: {e}");
            e.exit_code()
        }
    }
}
