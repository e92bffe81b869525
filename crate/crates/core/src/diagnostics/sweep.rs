//! Likelihood-versus-reward scatter over a population of checkpoints.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{mean, median, pearson};
use super::store::{fmt_f64, write_csv, RecordStore};
use crate::data::{episode_seed, BatchMode, TransitionSet};
use crate::env::{CartpoleParams, EpisodeResult};
use crate::error::Result;
use crate::model::{load_checkpoint, DynamicsModel};
use crate::parallel;
use crate::planner::{mpc_episodes, PlannerConfig};
use crate::seeding;

/// Checkpoints evaluated together before their results are stored.
const UNIT_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub env: CartpoleParams,
    pub planner: PlannerConfig,
    /// MPC episodes per checkpoint.
    pub n_eval: usize,
    pub episode_horizon: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            env: CartpoleParams::default(),
            planner: PlannerConfig::default(),
            n_eval: 10,
            episode_horizon: 200,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn episode_seeds(&self) -> Vec<u64> {
        let base = seeding::derive(self.seed, 0xe7a1);
        (0..self.n_eval).map(|k| episode_seed(base, k)).collect()
    }

    /// MPC episodes through `model` under the task `params`.
    pub fn episodes(&self, model: &DynamicsModel, params: &CartpoleParams) -> Result<Vec<EpisodeResult>> {
        let planner = PlannerConfig {
            seed: seeding::derive(self.seed, 0x9a2),
            ..self.planner.clone()
        };
        mpc_episodes(model, &planner, params, &self.episode_seeds(), self.episode_horizon)
    }

    /// Per-episode returns of MPC through `model`.
    pub fn rewards(&self, model: &DynamicsModel, params: &CartpoleParams) -> Result<Vec<f64>> {
        Ok(self.episodes(model, params)?.iter().map(|e| e.total_reward).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub eval: EvalConfig,
    pub batching: BatchMode,
    pub batch_size: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eval: EvalConfig::default(),
            batching: BatchMode::Random,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub model_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlSummary {
    /// Mean LL per transition.
    pub mean: f64,
    /// Median of the per-batch mean LLs.
    pub batch_median: f64,
    pub batching: BatchMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub model_id: String,
    pub dataset: String,
    pub ll: LlSummary,
    pub mean_reward: f64,
    pub reward_per_episode: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub dataset: String,
    pub batching: BatchMode,
    pub n: usize,
    /// Correlation of the batch-median LL with mean reward.
    pub pearson_rho: f64,
    /// Correlation of the pooled mean LL with mean reward.
    pub pearson_rho_pooled: f64,
    /// (batch-median LL, mean reward) per checkpoint.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub reports: Vec<CorrelationReport>,
}

/// LL summary of `model` on `set`. Sets without episode ids fall back to
/// random batching.
pub fn ll_summary(model: &DynamicsModel, set: &TransitionSet, batching: BatchMode, batch_size: usize, seed: u64) -> Result<LlSummary> {
    let batching = if batching == BatchMode::Trajectory && !set.has_episodes() {
        BatchMode::Random
    } else {
        batching
    };
    let report = model.evaluate_ll(set, batching, batch_size, seed)?;
    Ok(LlSummary {
        mean: report.mean,
        batch_median: median(&report.batch_means),
        batching,
    })
}

fn batching_tag(b: BatchMode) -> &'static str {
    match b {
        BatchMode::Random => "random",
        BatchMode::Trajectory => "trajectory",
    }
}

/// Evaluate every checkpoint on every dataset and against the controller.
/// Reward evaluations are shared between batchings through `store`.
pub fn ll_reward_sweep(
    checkpoints: &[CheckpointRef],
    datasets: &[(String, TransitionSet)],
    cfg: &SweepConfig,
    store: &mut RecordStore,
) -> Result<SweepResult> {
    if checkpoints.len() < 3 {
        return Err(crate::Error::DegenerateSample(format!(
            "need at least 3 checkpoints, got {}",
            checkpoints.len()
        )));
    }
    let bt = batching_tag(cfg.batching);
    let ll_seed = seeding::derive(cfg.eval.seed, 0x11);
    for chunk in checkpoints.chunks(UNIT_CHUNK) {
        let todo: Vec<&CheckpointRef> = chunk
            .iter()
            .filter(|c| {
                !store.contains(&format!("reward/{}", c.model_id))
                    || datasets.iter().any(|(tag, _)| !store.contains(&format!("ll/{}/{tag}/{bt}", c.model_id)))
            })
            .collect();
        let results = parallel::map_slice(&todo, |c| -> Result<(Option<Vec<f64>>, Vec<LlSummary>)> {
            let model = load_checkpoint(&c.path)?;
            let rewards = if store.contains(&format!("reward/{}", c.model_id)) {
                None
            } else {
                Some(cfg.eval.rewards(&model, &cfg.eval.env)?)
            };
            let lls = datasets
                .iter()
                .map(|(_, set)| ll_summary(&model, set, cfg.batching, cfg.batch_size, ll_seed))
                .collect::<Result<Vec<_>>>()?;
            Ok((rewards, lls))
        });
        for (c, res) in todo.iter().zip(results) {
            let (rewards, lls) = res?;
            if let Some(r) = rewards {
                store.put(&format!("reward/{}", c.model_id), &r)?;
            }
            for ((tag, _), ll) in datasets.iter().zip(lls) {
                let unit = format!("ll/{}/{tag}/{bt}", c.model_id);
                if !store.contains(&unit) {
                    store.put(&unit, &ll)?;
                }
            }
        }
    }

    let mut records = Vec::with_capacity(checkpoints.len() * datasets.len());
    for c in checkpoints {
        let rewards: Vec<f64> = store.get(&format!("reward/{}", c.model_id))?.expect("stored above");
        for (tag, _) in datasets {
            let ll: LlSummary = store.get(&format!("ll/{}/{tag}/{bt}", c.model_id))?.expect("stored above");
            records.push(SweepRecord {
                model_id: c.model_id.clone(),
                dataset: tag.clone(),
                ll,
                mean_reward: mean(&rewards),
                reward_per_episode: rewards.clone(),
            });
        }
    }
    let reports = datasets
        .iter()
        .map(|(tag, _)| correlation(tag, cfg.batching, &records))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult { records, reports })
}

pub fn correlation(tag: &str, batching: BatchMode, records: &[SweepRecord]) -> Result<CorrelationReport> {
    let rows: Vec<&SweepRecord> = records.iter().filter(|r| r.dataset == tag).collect();
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.ll.batch_median, r.mean_reward)).collect();
    let pooled: Vec<(f64, f64)> = rows.iter().map(|r| (r.ll.mean, r.mean_reward)).collect();
    Ok(CorrelationReport {
        dataset: tag.to_string(),
        batching,
        n: points.len(),
        pearson_rho: pearson(&points)?,
        pearson_rho_pooled: pearson(&pooled)?,
        points,
    })
}

pub fn write_sweep_csv(path: &Path, records: &[SweepRecord]) -> Result<()> {
    let header = ["model_id", "dataset", "batching", "ll_mean", "ll_batch_median", "mean_reward"].map(String::from);
    write_csv(
        path,
        &header,
        records.iter().map(|r| {
            vec![
                r.model_id.clone(),
                r.dataset.clone(),
                batching_tag(r.ll.batching).to_string(),
                fmt_f64(r.ll.mean),
                fmt_f64(r.ll.batch_median),
                fmt_f64(r.mean_reward),
            ]
        }),
    )
}

pub fn write_correlation_csv(path: &Path, reports: &[CorrelationReport]) -> Result<()> {
    let header = ["dataset", "batching", "n", "pearson_rho", "pearson_rho_pooled"].map(String::from);
    write_csv(
        path,
        &header,
        reports.iter().map(|r| {
            vec![
                r.dataset.clone(),
                batching_tag(r.batching).to_string(),
                r.n.to_string(),
                fmt_f64(r.pearson_rho),
                fmt_f64(r.pearson_rho_pooled),
            ]
        }),
    )
}
