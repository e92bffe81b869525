//! Reward of models trained on distance-filtered data, with and without
//! loss re-weighting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{mean, median};
use super::store::{fmt_f64, write_csv, RecordStore};
use super::sweep::EvalConfig;
use crate::data::{Bounds, DistanceMetric, DistancePool, ExpertDistance, TransitionSet};
use crate::env::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::model::{cartpole_rewards, weights_from, DynamicsModel, ModelConfig, TrainOptions, WeightMode, WeightSpec};
use crate::parallel;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    pub s_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub weighting: WeightSpec,
    /// Independent replicates per cell (own pool, subsample, model, episodes).
    pub n_seeds: usize,
    pub pool_size: usize,
    pub metric: DistanceMetric,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            s_grid: log_grid(10.0, 2500.0, 8).iter().map(|v| v.round() as usize).collect(),
            eps_grid: log_grid(0.28, 15.66, 8),
            weighting: WeightSpec::distance(),
            n_seeds: 5,
            pool_size: 50_000,
            metric: DistanceMetric::PointToPoint,
            model: ModelConfig::default(),
            eval: EvalConfig {
                n_eval: 1,
                ..EvalConfig::default()
            },
            seed: 0,
        }
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    pub s: usize,
    pub epsilon: f64,
    pub weighting: WeightMode,
    /// `None` when some replicate had fewer than `s` survivors.
    pub mean_reward: Option<f64>,
    pub median_reward: Option<f64>,
    /// Mean reward of each replicate.
    pub rewards: Vec<f64>,
    pub seeds: Vec<u64>,
}

fn replicate_seed(cfg: &HeatmapConfig, k: usize) -> u64 {
    seeding::derive2(cfg.seed, 0x4ea7, k as u64)
}

/// Train on each cell's filtered set and evaluate the controller.
pub fn reweight_heatmap(cfg: &HeatmapConfig, expert: &TransitionSet, store: &mut RecordStore) -> Result<Vec<HeatmapCell>> {
    if cfg.s_grid.is_empty() || cfg.eps_grid.is_empty() || cfg.n_seeds == 0 {
        return Err(Error::param("heatmap grids and seed count must be nonempty"));
    }
    let bounds = Bounds::cartpole();
    let env = &cfg.eval.env;
    let distance = ExpertDistance::new(expert, cfg.metric)?;
    let seeds: Vec<u64> = (0..cfg.n_seeds).map(|k| replicate_seed(cfg, k)).collect();
    let pools = seeds
        .iter()
        .map(|&s| DistancePool::sample(&distance, &bounds, cfg.pool_size, seeding::derive(s, 0)))
        .collect::<Result<Vec<_>>>()?;
    let mode = match cfg.weighting.mode {
        WeightMode::None => "off",
        WeightMode::Distance => "on",
        WeightMode::Reward => "reward",
    };
    let units: Vec<(usize, f64, usize)> = cfg
        .s_grid
        .iter()
        .flat_map(|&s| cfg.eps_grid.iter().flat_map(move |&e| (0..cfg.n_seeds).map(move |k| (s, e, k))))
        .collect();
    let unit_id = |&(s, e, k): &(usize, f64, usize)| format!("cell/{mode}/{s}/{e}/{k}");
    let todo: Vec<(usize, f64, usize)> = units.iter().filter(|u| !store.contains(&unit_id(u))).copied().collect();
    for chunk in todo.chunks(8) {
        let results = parallel::map_slice(chunk, |&(s, eps, k)| -> Result<Option<f64>> {
            let select_seed = seeding::derive2(seeds[k], s as u64, eps.to_bits());
            let set = match pools[k].select(eps, s, select_seed, env) {
                Ok(set) => set,
                Err(Error::TooFewSurvivors { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let rewards = match cfg.weighting.mode {
                WeightMode::Reward => Some(cartpole_rewards(&set, env)?),
                _ => None,
            };
            let weights = weights_from(&cfg.weighting, &set, rewards.as_deref())?;
            let mut model = DynamicsModel::new(
                ModelConfig {
                    seed: seeding::derive(seeds[k], 0x30de1),
                    ..cfg.model.clone()
                },
                STATE_DIM,
                ACTION_DIM,
            )?;
            let opts = TrainOptions {
                weights: Some(&weights),
                ..TrainOptions::default()
            };
            model.train(&set, &opts, None)?;
            let eval = EvalConfig {
                seed: seeds[k],
                ..cfg.eval.clone()
            };
            Ok(Some(mean(&eval.rewards(&model, env)?)))
        });
        for (u, r) in chunk.iter().zip(results) {
            store.put(&unit_id(u), &r?)?;
        }
    }
    let mut cells = Vec::new();
    for &s in &cfg.s_grid {
        for &e in &cfg.eps_grid {
            let per: Vec<Option<f64>> = (0..cfg.n_seeds)
                .map(|k| store.get::<Option<f64>>(&unit_id(&(s, e, k))).map(|v| v.flatten()))
                .collect::<Result<_>>()?;
            let rewards: Option<Vec<f64>> = per.into_iter().collect();
            cells.push(HeatmapCell {
                s,
                epsilon: e,
                weighting: cfg.weighting.mode,
                mean_reward: rewards.as_deref().map(mean),
                median_reward: rewards.as_deref().map(median),
                rewards: rewards.unwrap_or_default(),
                seeds: seeds.clone(),
            });
        }
    }
    Ok(cells)
}

pub fn write_heatmap_csv(path: &Path, cells: &[HeatmapCell]) -> Result<()> {
    let header = ["s", "epsilon", "weighting", "mean_reward", "median_reward"].map(String::from);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    write_csv(
        path,
        &header,
        cells.iter().map(|c| {
            vec![
                c.s.to_string(),
                fmt_f64(c.epsilon),
                format!("{:?}", c.weighting).to_lowercase(),
                opt(c.mean_reward),
                opt(c.median_reward),
            ]
        }),
    )
}
