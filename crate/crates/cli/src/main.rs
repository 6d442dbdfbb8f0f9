//! Command-line front end: synthetic data, indexing, training, generation,
//! retrieval and evaluation.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stockqa::model::Variant;

use crate::config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "stockqa", version, about = "Number-aware question answering over stock knowledge bases")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// sequential or hybrid.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Condition the decoder on a retrieved answer.
    #[arg(long, global = true)]
    hybrid_retrieval: bool,
    /// Root for relative paths.
    #[arg(long, global = true, env = "STOCKQA_DATA_DIR")]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus and print its statistics.
    Synth(commands::SynthArgs),
    /// Build a retrieval index from a corpus.
    Index(commands::IndexArgs),
    /// Train a tokenizer and model; writes a run directory.
    Train(commands::TrainArgs),
    /// Greedy answers for a query file as JSONL.
    Generate(commands::GenerateArgs),
    /// Ranked answers for one question and knowledge base.
    Retrieve(commands::RetrieveArgs),
    /// BLEU-2, diversity and informativeness of candidate answers.
    Eval(commands::EvalArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        seed: cli.global.seed,
        variant: cli.global.variant,
        hybrid_retrieval: cli.global.hybrid_retrieval,
        data_dir: cli.global.data_dir,
    };
    let result = RunConfig::load(cli.global.config.as_deref(), &overrides).and_then(|cfg| match cli.command {
        Command::Synth(a) => commands::synth(&cfg, &a),
        Command::Index(a) => commands::index(&cfg, &a),
        Command::Train(a) => commands::train(cfg, &a),
        Command::Generate(a) => commands::generate(&cfg, &a),
        Command::Retrieve(a) => commands::retrieve(&cfg, &a),
        Command::Eval(a) => commands::eval(&cfg, &a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::FAILURE
        }
    }
}
