use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use frpose_cli::commands::{
    cmd_analyze_quantization, cmd_dump_heatmaps, cmd_eval, cmd_param_count, cmd_train, TrainOptions,
};
use frpose_cli::{LoadedConfig, Result};

#[derive(Parser)]
#[command(name = "frpose", version, about = "Train and evaluate heatmap pose networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train, checkpoint and evaluate.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the eval set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Encode/decode error and flip displacement tables.
    AnalyzeQuantization {
        #[command(flatten)]
        common: Common,
    },
    /// Parameter counts for every ablation variant.
    ParamCount {
        #[command(flatten)]
        common: Common,
    },
    /// Write predicted and target heatmaps for a few eval samples.
    DumpHeatmaps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<LoadedConfig> {
    Ok(LoadedConfig::load(&common.config)?.with_seed(common.seed))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => {
            let report = cmd_train(&load(&common)?, &common.out, &TrainOptions { resume })?;
            if let Some(m) = &report.metrics {
                print!("{}", m.to_table());
            }
        }
        Command::Eval { common, checkpoint } => {
            let report = cmd_eval(&load(&common)?, &common.out, checkpoint.as_deref())?;
            if let Some(m) = &report.metrics {
                print!("{}", m.to_table());
            }
        }
        Command::AnalyzeQuantization { common } => {
            cmd_analyze_quantization(&load(&common)?, &common.out)?;
        }
        Command::ParamCount { common } => {
            cmd_param_count(&load(&common)?, &common.out)?;
        }
        Command::DumpHeatmaps { common, checkpoint } => {
            cmd_dump_heatmaps(&load(&common)?, &common.out, checkpoint.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
