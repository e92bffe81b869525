//! Experiment configuration: one TOML tree plus `--set a.b=v` overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mismatch::adversarial::AttackConfig;
use mismatch::data::{Bounds, DistanceMetric, ExpertSpec};
use mismatch::diagnostics::{BabbleConfig, EpochCurveConfig, GoalConfig, HeatmapConfig, InitialData, PetsConfig, SweepConfig};
use mismatch::env::CartpoleParams;
use mismatch::model::{ModelConfig, TrainMode, WeightSpec};
use mismatch::planner::PlannerConfig;
use mismatch::data::BatchMode;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MISMATCH_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaggedPath {
    pub tag: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub n_eval: usize,
    pub episode_horizon: usize,
}

impl Default for EvalBlock {
    fn default() -> Self {
        Self {
            n_eval: 10,
            episode_horizon: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterBlock {
    /// Expert dataset the distances are measured to.
    pub expert: Option<PathBuf>,
    pub epsilon: f64,
    pub keep: usize,
    pub pool_size: usize,
    pub metric: DistanceMetric,
}

impl Default for FilterBlock {
    fn default() -> Self {
        Self {
            expert: None,
            epsilon: 2.0,
            keep: 1000,
            pool_size: 1_000_000,
            metric: DistanceMetric::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BabbleData {
    pub rollouts: usize,
    pub horizon: usize,
}

impl Default for BabbleData {
    fn default() -> Self {
        Self { rollouts: 20, horizon: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataBlock {
    pub bounds: Bounds,
    pub grid_slices: usize,
    pub grid_cap: usize,
    pub sampled_n: usize,
    pub expert: ExpertSpec,
    /// Planner for expert collection; the top-level planner when absent.
    pub expert_planner: Option<PlannerConfig>,
    pub filter: FilterBlock,
    pub babble: BabbleData,
}

impl Default for DataBlock {
    fn default() -> Self {
        Self {
            bounds: Bounds::cartpole(),
            grid_slices: 7,
            grid_cap: 10_000_000,
            sampled_n: 200_000,
            expert: ExpertSpec::default(),
            expert_planner: None,
            filter: FilterBlock::default(),
            babble: BabbleData::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub dataset: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub weighting: WeightSpec,
    pub val_batching: BatchMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PetsBlock {
    pub n_trials: usize,
    pub episode_horizon: usize,
    pub initial_data: InitialData,
    pub train_mode: TrainMode,
    pub val_fraction: f64,
    pub seeds: Vec<u64>,
    /// Extra datasets whose LL is recorded every trial.
    pub eval_sets: Vec<TaggedPath>,
}

impl Default for PetsBlock {
    fn default() -> Self {
        let d = PetsConfig::default();
        Self {
            n_trials: d.n_trials,
            episode_horizon: d.episode_horizon,
            initial_data: d.initial_data,
            train_mode: d.train_mode,
            val_fraction: d.val_fraction,
            seeds: vec![0],
            eval_sets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    /// Checkpoint files, or directories searched recursively for `*.ckpt`.
    pub checkpoints: Vec<PathBuf>,
    pub datasets: Vec<TaggedPath>,
    pub batching: BatchMode,
    pub batch_size: usize,
}

impl Default for SweepBlock {
    fn default() -> Self {
        let d = SweepConfig::default();
        Self {
            checkpoints: Vec::new(),
            datasets: Vec::new(),
            batching: d.batching,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochBlock {
    pub dataset: Option<PathBuf>,
    pub val_sets: Vec<TaggedPath>,
    pub eval_every: usize,
}

impl Default for EpochBlock {
    fn default() -> Self {
        Self {
            dataset: None,
            val_sets: Vec::new(),
            eval_every: EpochCurveConfig::default().eval_every,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackBlock {
    pub checkpoint: Option<PathBuf>,
    pub validation: Option<PathBuf>,
    pub search: AttackConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapBlock {
    /// Expert dataset; collected with `data.expert` when absent.
    pub expert: Option<PathBuf>,
    pub s_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub weighting: WeightSpec,
    pub n_seeds: usize,
    pub pool_size: usize,
    pub metric: DistanceMetric,
}

impl Default for HeatmapBlock {
    fn default() -> Self {
        let d = HeatmapConfig::default();
        Self {
            expert: None,
            s_grid: d.s_grid,
            eps_grid: d.eps_grid,
            weighting: d.weighting,
            n_seeds: d.n_seeds,
            pool_size: d.pool_size,
            metric: d.metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BabbleBlock {
    pub counts: Vec<usize>,
    pub rollout_horizon: usize,
    pub seeds: Vec<u64>,
    pub threshold: f64,
}

impl Default for BabbleBlock {
    fn default() -> Self {
        let d = BabbleConfig::default();
        Self {
            counts: d.counts,
            rollout_horizon: d.rollout_horizon,
            seeds: d.seeds,
            threshold: d.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoalBlock {
    pub checkpoints: Vec<PathBuf>,
    pub goals: Vec<f64>,
    pub hist_low: f64,
    pub hist_high: f64,
    pub bin_width: f64,
}

impl Default for GoalBlock {
    fn default() -> Self {
        let d = GoalConfig::default();
        Self {
            checkpoints: Vec::new(),
            goals: d.goals,
            hist_low: d.hist_low,
            hist_high: d.hist_high,
            bin_width: d.bin_width,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareBlock {
    pub model_a: Option<PathBuf>,
    pub model_b: Option<PathBuf>,
    /// Dataset holding the expert episode planned along.
    pub expert: Option<PathBuf>,
    pub episode: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub env: CartpoleParams,
    pub model: ModelConfig,
    pub planner: PlannerConfig,
    pub eval: EvalBlock,
    pub data: DataBlock,
    pub train: TrainBlock,
    pub pets: PetsBlock,
    pub sweep: SweepBlock,
    pub epoch_curve: EpochBlock,
    pub attack: AttackBlock,
    pub heatmap: HeatmapBlock,
    pub babble: BabbleBlock,
    pub goals: GoalBlock,
    pub compare: CompareBlock,
}

impl ExperimentConfig {
    /// Parse `text` (TOML) after applying `key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().context("config is not valid TOML")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let value = toml::Value::Table(table);
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("invalid config at `{path}`: {}", e.inner().message())
        })
    }

    /// Load from `path`, or start from defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn eval(&self) -> mismatch::diagnostics::EvalConfig {
        mismatch::diagnostics::EvalConfig {
            env: self.env.clone(),
            planner: self.planner.clone(),
            n_eval: self.eval.n_eval,
            episode_horizon: self.eval.episode_horizon,
            seed: self.seed,
        }
    }

    pub fn pets(&self) -> PetsConfig {
        PetsConfig {
            env: self.env.clone(),
            model: self.model.clone(),
            planner: self.planner.clone(),
            n_trials: self.pets.n_trials,
            episode_horizon: self.pets.episode_horizon,
            initial_data: self.pets.initial_data,
            train_mode: self.pets.train_mode,
            val_fraction: self.pets.val_fraction,
            seed: self.seed,
        }
    }

    pub fn sweep(&self, batching: BatchMode) -> SweepConfig {
        SweepConfig {
            eval: self.eval(),
            batching,
            batch_size: self.sweep.batch_size,
        }
    }

    pub fn epoch_curve(&self) -> EpochCurveConfig {
        EpochCurveConfig {
            model: self.model.clone(),
            eval: self.eval(),
            eval_every: self.epoch_curve.eval_every,
        }
    }

    pub fn attack(&self) -> AttackConfig {
        self.attack.search.clone()
    }

    pub fn heatmap(&self, weighting: WeightSpec) -> HeatmapConfig {
        HeatmapConfig {
            s_grid: self.heatmap.s_grid.clone(),
            eps_grid: self.heatmap.eps_grid.clone(),
            weighting,
            n_seeds: self.heatmap.n_seeds,
            pool_size: self.heatmap.pool_size,
            metric: self.heatmap.metric,
            model: self.model.clone(),
            eval: self.eval(),
            seed: self.seed,
        }
    }

    pub fn babble(&self) -> BabbleConfig {
        BabbleConfig {
            counts: self.babble.counts.clone(),
            rollout_horizon: self.babble.rollout_horizon,
            seeds: self.babble.seeds.clone(),
            threshold: self.babble.threshold,
            pets: self.pets(),
        }
    }

    pub fn goals(&self) -> GoalConfig {
        GoalConfig {
            goals: self.goals.goals.clone(),
            eval: self.eval(),
            hist_low: self.goals.hist_low,
            hist_high: self.goals.hist_high,
            bin_width: self.goals.bin_width,
        }
    }

    pub fn expert_planner(&self) -> PlannerConfig {
        self.data.expert_planner.clone().unwrap_or_else(|| self.planner.clone())
    }
}

/// Set `a.b.c = value` in `table`; the value is parsed as TOML and falls
/// back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let Some((key, raw)) = assignment.split_once('=') else {
        bail!("override `{assignment}` is not of the form key=value");
    };
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let mut node = table;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("override key `{}` is not a table", parts[..=i].join(".")),
        };
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(ExperimentConfig::from_toml("", &[]).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = ExperimentConfig::from_toml(
            "[model]\nwidth = 32\n",
            &["model.width=64".into(), "planner.horizon = 7".into(), "pets.seeds=[1,2]".into(), "model.kind=D".into()],
        )
        .unwrap();
        assert_eq!(cfg.model.width, 64);
        assert_eq!(cfg.planner.horizon, 7);
        assert_eq!(cfg.pets.seeds, vec![1, 2]);
        assert_eq!(cfg.model.kind, mismatch::model::ModelKind::D);
    }

    #[test]
    fn errors_name_the_key_path() {
        let err = ExperimentConfig::from_toml("[model]\nwidth = \"wide\"\n", &[]).unwrap_err();
        assert!(err.to_string().contains("model.width"), "{err}");
        let err = ExperimentConfig::from_toml("[planner]\nhorizonn = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("planner") && err.to_string().contains("horizonn"), "{err}");
        assert!(ExperimentConfig::from_toml("", &["seed".into()]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_toml("seed = 4\n[heatmap]\nn_seeds = 2\n", &[]).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text, &[]).unwrap(), cfg);
    }
}
