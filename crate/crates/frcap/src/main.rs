//! The `frcap` binary: capacity measures for rectified networks from the
//! command line.
//!
//! Every subcommand reads one JSON configuration file (`--config`), applies
//! any `--set key=value` overrides, honours the `FRCAP_SEED` environment
//! variable, and writes its reports into the configured output directory.
//!
//! Exit codes: 0 on success, 1 when the command line or configuration is
//! invalid, 2 when a run starts and then fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use frcap::config::Config;
use frcap::runners;

#[derive(Parser)]
#[command(
    name = "frcap",
    version,
    about = "Fisher-Rao capacity toolkit for rectified networks",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Arguments shared by every subcommand.
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration (schema v1).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Dotted-path override applied before validation, e.g.
    /// `--set train.lr=0.01`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured network and record history, weights and a summary.
    Train(RunArgs),
    /// Capacity-measure report for one network on one dataset.
    Norms(RunArgs),
    /// Run the structural verification suites and print one line per check.
    Verify(RunArgs),
    /// Monte-Carlo Rademacher complexity of the linear unit-norm class.
    Rademacher(RunArgs),
    /// Train (or load) a classifier and report normalized margins.
    Margins(RunArgs),
    /// Width x label-noise generalization sweep.
    Sweep(RunArgs),
    /// Gradient descent versus natural gradient on the same task.
    Conditioning(RunArgs),
}

impl Command {
    fn dispatch(&self) -> (&RunArgs, fn(&Config) -> frcap::Result<()>) {
        match self {
            Command::Train(a) => (a, runners::run_train),
            Command::Norms(a) => (a, runners::run_norms),
            Command::Verify(a) => (a, runners::run_verify),
            Command::Rademacher(a) => (a, runners::run_rademacher),
            Command::Margins(a) => (a, runners::run_margins),
            Command::Sweep(a) => (a, runners::run_sweep),
            Command::Conditioning(a) => (a, runners::run_conditioning),
        }
    }
}

fn main() -> ExitCode {
    // Parse by hand so usage errors land on exit code 1 with the validation
    // failures instead of clap's default 2, which is reserved for run
    // failures here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    let (args, run) = cli.command.dispatch();
    match Config::load(&args.config, &args.set).and_then(|config| run(&config)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
