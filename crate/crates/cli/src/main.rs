//! `rfseeker` command-line entry point.
//!
//! Exit codes: 0 on success, 2 for configuration errors, 3 for runtime
//! failures. `RFSEEKER_THREADS` caps the worker pool.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rfseeker::app::{run, Command, RunOptions};

#[derive(Parser)]
#[command(name = "rfseeker", version, about = "RF emitter-seeking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize the observation grid and fit the normalizer.
    Simulate(Common),
    /// Train a PPO or DQN agent.
    Train(Common),
    /// Meta-train an actor-critic across scene variants.
    MetaTrain(Common),
    /// Evaluate a checkpoint.
    Eval(Common),
    /// Export per-cell feature heatmaps.
    Heatmap(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to resume from (train, meta-train) or to evaluate (eval).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seeds.master`.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress output.
    #[arg(long, short)]
    quiet: bool,
}

fn init_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("RFSEEKER_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("RFSEEKER_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let (cmd, common) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::MetaTrain(c) => (Command::MetaTrain, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Heatmap(c) => (Command::Heatmap, c),
    };
    let opts = RunOptions {
        checkpoint: common.checkpoint,
        out: common.out,
        seed: common.seed,
        verbose: !common.quiet,
    };
    match run(cmd, &common.config, &opts) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
