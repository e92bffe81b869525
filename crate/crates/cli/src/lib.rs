//! Command-line driver: parses arguments, resolves the experiment config and
//! dispatches to the harnesses.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mismatch", version, about = "Objective-mismatch experiments on swing-up cart-pole")]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply to missing keys.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set model.width=64`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Worker threads for the parallel harnesses; 0 uses all cores.
    #[arg(long, default_value_t = 0, global = true)]
    pub workers: usize,
    /// Output directory; overrides `out_dir` and the environment default.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Grid,
    Sampled,
    OnPolicy,
    Expert,
    Filtered,
    Babble,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Batching {
    Random,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reweight {
    On,
    Off,
    Reward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weighting {
    None,
    Distance,
    Reward,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a transition dataset.
    GenData {
        kind: DataKind,
        /// Grid slices per dimension.
        #[arg(long)]
        slices: Option<usize>,
        /// Number of sampled points.
        #[arg(long)]
        n: Option<usize>,
        /// Output file; defaults to `<out>/<kind>.csv`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a dynamics model on `train.dataset`.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        weighting: Option<Weighting>,
    },
    /// Run the PETS loop for every seed in `pets.seeds`.
    RunPets,
    /// LL-versus-reward correlation over a checkpoint population.
    SweepLlr {
        #[arg(long)]
        batching: Option<Batching>,
    },
    /// Reward and losses along training epochs.
    EpochCurve,
    /// Adversarial search over the output layer of a checkpoint.
    Attack,
    /// Dataset-size by distance-bound reward grid.
    Heatmap {
        #[arg(long)]
        reweight: Option<Reweight>,
    },
    /// Learning speed under extra random-rollout data.
    BabbleStudy,
    /// Reward of checkpoints under shifted goals.
    GoalGen,
    /// Planned actions of two models along an expert episode.
    ComparePlans,
    /// Render a result CSV to SVG.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData { .. } => "gen-data",
            Command::Train { .. } => "train",
            Command::RunPets => "run-pets",
            Command::SweepLlr { .. } => "sweep-llr",
            Command::EpochCurve => "epoch-curve",
            Command::Attack => "attack",
            Command::Heatmap { .. } => "heatmap",
            Command::BabbleStudy => "babble-study",
            Command::GoalGen => "goal-gen",
            Command::ComparePlans => "compare-plans",
            Command::Plot { .. } => "plot",
        }
    }
}

pub use commands::run;
