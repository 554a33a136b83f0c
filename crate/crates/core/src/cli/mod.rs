//! Command-line front end: experiment config, dataset I/O and the five
//! subcommands.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_decode, cmd_eval, cmd_gen_data, cmd_simulate_latency, cmd_train, load_model, read_corpus,
    EvalFile, HypothesisRecord, LatencyFile, UtteranceLatency,
};
pub use config::{ExperimentConfig, ModelConfig, PathsConfig};

#[derive(Debug, Parser)]
#[command(name = "s2st", version, about = "Streaming transducer translation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic corpus as JSONL.
    GenData(CommonArgs),
    /// Train the toy transducer and write a checkpoint.
    Train(CommonArgs),
    /// Decode the eval corpus and write per-token emission frames.
    Decode(CommonArgs),
    /// Score latency of a hypotheses file under the configured schedule.
    SimulateLatency(CommonArgs),
    /// Run the full streaming pipeline and write a report.
    Eval(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the corpus, initialization and batch-order seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; defaults to the matching entry of `[paths]`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let args = match &cli.command {
        Command::GenData(a)
        | Command::Train(a)
        | Command::Decode(a)
        | Command::SimulateLatency(a)
        | Command::Eval(a) => a,
    };
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.override_seed(seed);
    }
    let paths = config.paths.clone();
    let out = |default: &PathBuf| args.out.clone().unwrap_or_else(|| default.clone());
    match cli.command {
        Command::GenData(_) => cmd_gen_data(&config, &out(&paths.data)),
        Command::Train(_) => cmd_train(&config, &paths.data, &out(&paths.checkpoint)),
        Command::Decode(_) => cmd_decode(
            &config,
            &paths.checkpoint,
            config.eval_data(),
            &out(&paths.hypotheses),
        ),
        Command::SimulateLatency(_) => {
            cmd_simulate_latency(&config, &paths.hypotheses, &out(&paths.latency_report))
        }
        Command::Eval(_) => cmd_eval(&config, &paths.checkpoint, config.eval_data(), &out(&paths.report)),
    }
}
