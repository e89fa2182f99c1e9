use std::path::Path;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod config;
mod manifest;

use commands::{
    AdaptArgs, AnalyzeArgs, DemoLossArgs, DiffArgs, GradCheckArgs, InitEmbeddingsArgs, ScoreArgs,
    TrainArgs,
};

/// Adapt a pretrained subword vocabulary to a domain corpus.
#[derive(Debug, Parser)]
#[command(name = "vocadapt", version)]
struct Cli {
    /// key = value file supplying flags; command-line flags take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<std::path::PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a BPE domain vocabulary and its merge list.
    TrainDomainVocab(TrainArgs),
    /// Extend a pretrained vocabulary with domain tokens.
    Adapt(AdaptArgs),
    /// Fragment score and piece histogram of a vocabulary on a corpus.
    Score(ScoreArgs),
    /// Words tokenized differently by two vocabularies.
    Diff(DiffArgs),
    /// Fragment score for every (corpus, vocabulary) pair.
    Analyze(AnalyzeArgs),
    /// Extend an embedding table to an adapted vocabulary.
    InitEmbeddings(InitEmbeddingsArgs),
    /// Evaluate the fine-tuning losses on one batch.
    DemoLoss(DemoLossArgs),
    /// Compare analytic loss gradients with finite differences.
    GradCheck(GradCheckArgs),
}

/// Bad flags or config values. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A check ran to completion and did not pass. Exit code 1.
#[derive(Debug)]
pub struct CheckFailed;

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        1
    } else if err.downcast_ref::<UsageError>().is_some() {
        2
    } else if let Some(e) = err.downcast_ref::<vocadapt::Error>() {
        if e.is_config_error() {
            2
        } else {
            3
        }
    } else {
        3
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}

pub fn print_json<T: Serialize + ?Sized>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("VOCADAPT_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            UsageError(format!(
                "VOCADAPT_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    let cmd = Cli::command();
    let args = config::expand_args(&cmd, std::env::args_os().collect()).map_err(UsageError)?;
    let matches = match cmd.try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    init_threads()?;
    match cli.command {
        Command::TrainDomainVocab(a) => commands::train_domain_vocab(&a),
        Command::Adapt(a) => commands::adapt(&a),
        Command::Score(a) => commands::score(&a),
        Command::Diff(a) => commands::diff(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::InitEmbeddings(a) => commands::init_embeddings(&a),
        Command::DemoLoss(a) => commands::demo_loss(&a),
        Command::GradCheck(a) => commands::grad_check(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            if code != 1 {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(code)
        }
    }
}
