use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sglmm_cli::config::RunConfig;
use sglmm_cli::error::CliError;
use sglmm_cli::{commands, init_threads, study};

#[derive(Parser)]
#[command(name = "sglmm", version, about = "Projection-based MCML for spatial GLMMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides of configuration keys.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario dataset.
    Simulate(Common),
    /// Fit a dataset.
    Fit(Common),
    /// Predict the random effect at new sites from a fit.
    Predict(Common),
    /// Parametric bootstrap around a fit.
    Bootstrap(Common),
    /// Replicated simulate-and-fit study.
    Study(Common),
}

type Handler = fn(&RunConfig) -> Result<u8, CliError>;

fn run(cli: Cli) -> Result<u8, CliError> {
    init_threads()?;
    let (args, f): (Common, Handler) = match cli.command {
        Command::Simulate(a) => (a, commands::cmd_simulate),
        Command::Fit(a) => (a, commands::cmd_fit),
        Command::Predict(a) => (a, commands::cmd_predict),
        Command::Bootstrap(a) => (a, commands::cmd_bootstrap),
        Command::Study(a) => (a, study::cmd_study),
    };
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    f(&cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
