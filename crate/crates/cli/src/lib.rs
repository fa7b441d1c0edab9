//! Command-line front end: training, evaluation, scene execution, seated
//! pose sampling and path planning.
//!
//! Every command writes only below its output directory and maps failures
//! to three exit codes (see [`CliError::exit_code`]).

pub mod commands;
pub mod config;
pub mod plot;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{ExperimentConfig, Preset};

/// Environment variable holding the number of worker threads.
pub const WORKERS_ENV: &str = "HSI_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config values or referenced files.
    #[error("configuration error: {0}")]
    Config(String),
    /// A scene or plan failed validation.
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Validation(_) => 3,
            Self::Runtime(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "hsi",
    version,
    about = "Train, evaluate and sequence scene-interaction controllers"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; nothing is written elsewhere.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. `--set trainer.lr=1e-3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one skill and write checkpoints plus a metrics CSV.
    Train {
        #[arg(long)]
        task: String,
        /// Overrides `trainer.iterations`.
        #[arg(long)]
        iterations: Option<usize>,
        /// Pose database for get-up tasks; overrides `paths.pose_db`.
        #[arg(long)]
        pose_db: Option<PathBuf>,
    },
    /// Run randomized trials of one skill and summarize them.
    Eval {
        #[arg(long)]
        task: String,
        /// Checkpoint path, or `oracle`, `random`, `idle`.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        trials: Option<usize>,
        /// Independent seeds (seed, seed+1, ...); trials are pooled.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
        #[arg(long)]
        pose_db: Option<PathBuf>,
    },
    /// Execute a plan in a scene over many trials.
    RunScene {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// `task=checkpoint` or `task=oracle`. Repeatable; adds to
        /// `paths.checkpoints`.
        #[arg(long = "policy", value_name = "TASK=PATH")]
        policies: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// Start position `x,y`; defaults to 1.5 m in front of the first
        /// object in the plan.
        #[arg(long, value_parser = parse_point)]
        start: Option<(f64, f64)>,
        /// Also write an overhead SVG of the first trial.
        #[arg(long)]
        plot: bool,
    },
    /// Build a seated (or lying) pose database with a trained skill.
    SamplePoses {
        /// `sit` or `liedown`.
        #[arg(long)]
        task: String,
        /// Checkpoint path or `oracle`.
        #[arg(long)]
        policy: String,
        /// Poses per object.
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Which catalog split to cover: train, test or all.
        #[arg(long, default_value = "all")]
        objects: String,
    },
    /// Plan a collision-free trajectory to an object's standing point.
    Plan {
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long, value_parser = parse_point)]
        from: (f64, f64),
        #[arg(long)]
        to: String,
        #[arg(long)]
        plot: bool,
    },
}

fn parse_point(s: &str) -> Result<(f64, f64), String> {
    let (x, y) = s.split_once(',').ok_or("expected x,y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok((p(x)?, p(y)?))
}

/// Sizes the global rayon pool from [`WORKERS_ENV`] if set.
pub fn init_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::Config(format!(
            "{WORKERS_ENV} must be a positive integer, got `{raw}`"
        ))
    })?;
    if n == 0 {
        return Err(CliError::Config(format!("{WORKERS_ENV} must be positive")));
    }
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    commands::dispatch(&cli.common, cli.command)
}
