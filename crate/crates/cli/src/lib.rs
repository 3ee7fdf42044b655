//! Command-line front end: study and prediction files, run configuration,
//! reports and the `haipw` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;
use crate::error::{CliError, EXIT_OK, EXIT_USAGE};
use crate::report::ReportFormat;

#[derive(Debug, Parser)]
#[command(name = "haipw", version, about = "Treatment effect estimation with external outcome predictions")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides seeds in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Significance level for confidence intervals.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run every estimator on a study and its predictions.
    Estimate,
    /// Repeated balanced subsampling benchmark.
    Bench,
    /// Monte Carlo study on a synthetic data-generating process.
    Simulate,
    /// Sample-size reduction of H-AIPW against a baseline.
    Reduce,
    /// Collect predictions from a chat-completion model.
    Predict,
    /// Check the config and every file it references.
    Validate,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Usage("missing --config <PATH>".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(alpha) = cli.alpha {
        config.estimator.alpha = alpha;
        config.validate()?;
    }
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let mut ctx = Context { config, seed, seed_flag: cli.seed, out: cli.out, format: cli.format, warnings: Vec::new() };
    match cli.command {
        Command::Estimate => commands::estimate(&mut ctx),
        Command::Bench => commands::bench(&mut ctx),
        Command::Simulate => commands::simulate(&mut ctx),
        Command::Reduce => commands::reduce(&mut ctx),
        Command::Predict => commands::predict(&mut ctx),
        Command::Validate => commands::validate(&mut ctx),
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let err = CliError::Usage(e.kind().to_string());
            eprint!("{}", e.render());
            eprintln!("{}", err.to_json_line());
            return EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            if err.exit_code() == EXIT_USAGE {
                eprintln!("{}", Cli::command_usage());
            }
            eprintln!("{}", err.to_json_line());
            err.exit_code()
        }
    }
}

impl Cli {
    fn command_usage() -> String {
        use clap::CommandFactory;
        Cli::command().render_usage().to_string()
    }
}
