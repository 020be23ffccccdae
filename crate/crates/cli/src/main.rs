//! `sleeper` — interpretable sleep staging over synthetic PSG recordings.
//!
//! Subcommands: `synth`, `train`, `score`, `eval`, `sweep-depth`,
//! `sweep-rules`, `explain`. All outputs land under the directory named by
//! `--out`. The training seed comes from `--seed`, a JSON config file, or
//! the `SLEEPER_SEED` environment variable, in that order.

mod chart;
mod commands;
mod csvio;

use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "sleeper", version, about = "Interpretable sleep staging pipeline")]
struct Cli {
    /// Worker threads for feature extraction and scoring (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic PSG corpus.
    Synth(commands::SynthArgs),
    /// Train the CNN, rule bank, prototypes, and classifier; persist artifacts.
    Train(commands::TrainArgs),
    /// Score a recording with trained artifacts.
    Score(commands::ScoreArgs),
    /// Evaluate a predictions CSV against a labeled recording.
    Eval(commands::EvalArgs),
    /// Held-out ROC-AUC as a function of decision-tree depth.
    SweepDepth(commands::SweepDepthArgs),
    /// Held-out ROC-AUC as a function of the number of selected rules.
    SweepRules(commands::SweepRulesArgs),
    /// Render the fitted decision tree with its rule annotations.
    Explain(commands::ExplainArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .ok();
    }
    let outcome: Result<()> = match cli.command {
        Command::Synth(args) => commands::run_synth(args),
        Command::Train(args) => commands::run_train(args),
        Command::Score(args) => commands::run_score(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::SweepDepth(args) => commands::run_sweep_depth(args),
        Command::SweepRules(args) => commands::run_sweep_rules(args),
        Command::Explain(args) => commands::run_explain(args),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

/// Seed precedence: explicit flag, then config file, then SLEEPER_SEED, then 42.
pub(crate) fn resolve_seed(flag: Option<u64>, config_seed: Option<u64>) -> u64 {
    flag.or(config_seed)
        .or_else(|| {
            std::env::var("SLEEPER_SEED")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(42)
}

pub(crate) fn ensure_out_dir(path: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}
