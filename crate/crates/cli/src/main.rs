use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qcorr_cli::{
    cmd_evaluate, cmd_pipeline, cmd_report, cmd_simulate, cmd_train, cmd_verify, parse_overrides, CliError,
    PipelineConfig,
};

/// Twin-beam correlation recovery pipeline.
///
/// Configuration comes from an optional sectioned key=value file, then
/// `--section.key=value` overrides, then the QCORR_SEED environment variable.
#[derive(Parser)]
#[command(name = "qcorr", version)]
struct Cli {
    /// Configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write training and evaluation recordings.
    Simulate(Overrides),
    /// Train the three-block model; writes the checkpoint and loss curves.
    Train(Overrides),
    /// Evaluate a checkpoint on the evaluation recording.
    Evaluate {
        /// Checkpoint to evaluate instead of the one under the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        rest: Overrides,
    },
    /// Single-stream reconstruction of the undisrupted pair.
    Verify(Overrides),
    /// Summarize the stored report.
    Report(Overrides),
    /// simulate, train and evaluate in sequence.
    Pipeline(Overrides),
}

#[derive(clap::Args)]
struct Overrides {
    /// Overrides of the form --section.key=value.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    set: Vec<String>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let sets = match &cli.cmd {
        Cmd::Simulate(o) | Cmd::Train(o) | Cmd::Verify(o) | Cmd::Report(o) | Cmd::Pipeline(o) => &o.set,
        Cmd::Evaluate { rest, .. } => &rest.set,
    };
    let cfg = PipelineConfig::load(cli.config.as_deref(), &parse_overrides(sets)?)?;
    match &cli.cmd {
        Cmd::Simulate(_) => cmd_simulate(&cfg).map(drop),
        Cmd::Train(_) => cmd_train(&cfg).map(drop),
        Cmd::Evaluate { checkpoint, .. } => cmd_evaluate(&cfg, checkpoint.as_deref()).map(drop),
        Cmd::Verify(_) => cmd_verify(&cfg).map(drop),
        Cmd::Report(_) => cmd_report(&cfg).map(drop),
        Cmd::Pipeline(_) => cmd_pipeline(&cfg).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qcorr: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
