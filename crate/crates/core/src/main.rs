//! Command-line pipeline: `simulate`, `image`, `train`, `score`, `report`,
//! each taking `--config <path>` and `--out <dir>`. Exit code 0 on success;
//! on failure a single machine-readable JSON error line goes to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rpdiag::pipeline::{self, RunConfig};

#[derive(Parser)]
#[command(
    name = "rpdiag",
    about = "PMSM inter-turn short-circuit diagnosis via recurrence-plot imaging, CNN features, and a Mahalanobis health indicator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct StageArgs {
    /// TOML run configuration; missing fields take desk-scale defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for artifacts and the manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic three-phase current CSVs for every fault cell.
    Simulate(StageArgs),
    /// Window, embed, and image the signals as clipped recurrence plots.
    Image(StageArgs),
    /// Train the CNN classifier on a labeled subset of the images.
    Train(StageArgs),
    /// Extract activations, fit/apply the healthy baseline, write MD scores.
    Score(StageArgs),
    /// Emit charts, data CSVs, and the severity summary.
    Report(StageArgs),
    /// Run all five stages in order.
    Run(StageArgs),
    /// Print the default configuration as TOML.
    DefaultConfig,
}

fn load_config(args: &StageArgs) -> rpdiag::Result<RunConfig> {
    match &args.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn run(cmd: &Command) -> rpdiag::Result<()> {
    match cmd {
        Command::Simulate(a) => pipeline::cmd_simulate(&load_config(a)?, &a.out),
        Command::Image(a) => pipeline::cmd_image(&load_config(a)?, &a.out),
        Command::Train(a) => pipeline::cmd_train(&load_config(a)?, &a.out),
        Command::Score(a) => pipeline::cmd_score(&load_config(a)?, &a.out),
        Command::Report(a) => pipeline::cmd_report(&load_config(a)?, &a.out),
        Command::Run(a) => pipeline::run_all(&load_config(a)?, &a.out),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
