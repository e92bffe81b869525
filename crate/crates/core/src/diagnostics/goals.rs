//! Trained models reused under goal-shifted rewards.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::mean;
use super::store::{fmt_f64, write_csv, RecordStore};
use super::sweep::{CheckpointRef, EvalConfig};
use crate::error::{Error, Result};
use crate::model::load_checkpoint;
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoalConfig {
    pub goals: Vec<f64>,
    pub eval: EvalConfig,
    pub hist_low: f64,
    pub hist_high: f64,
    pub bin_width: f64,
}

impl Default for GoalConfig {
    fn default() -> Self {
        Self {
            goals: vec![0.0, 0.1, 0.5, 1.0],
            eval: EvalConfig::default(),
            hist_low: -3.0,
            hist_high: 3.0,
            bin_width: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRow {
    pub model_id: String,
    pub goal: f64,
    pub mean_reward: f64,
    pub reward_per_episode: Vec<f64>,
}

/// Visited cart positions under the training goal; values outside the
/// range land in the edge bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XHistogram {
    pub model_id: String,
    pub low: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    /// Fraction of visits with |x| < 0.5, from the raw positions.
    pub near_zero_fraction: f64,
}

impl XHistogram {
    pub fn from_positions(model_id: &str, xs: &[f64], low: f64, high: f64, bin_width: f64) -> Self {
        let bins = ((high - low) / bin_width).round() as usize;
        let mut counts = vec![0u64; bins];
        for &x in xs {
            let b = ((x - low) / bin_width).floor();
            let b = if b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            counts[b] += 1;
        }
        let near = xs.iter().filter(|x| x.abs() < 0.5).count();
        Self {
            model_id: model_id.to_string(),
            low,
            bin_width,
            counts,
            near_zero_fraction: near as f64 / xs.len().max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalResult {
    pub rows: Vec<GoalRow>,
    pub histograms: Vec<XHistogram>,
}

#[derive(Serialize, Deserialize)]
struct Unit {
    rows: Vec<GoalRow>,
    histogram: XHistogram,
}

pub fn goal_generalization(checkpoints: &[CheckpointRef], cfg: &GoalConfig, store: &mut RecordStore) -> Result<GoalResult> {
    if cfg.goals.iter().any(|g| !g.is_finite()) {
        return Err(Error::param("goals must be finite"));
    }
    if !(cfg.bin_width > 0.0) || !(cfg.hist_high > cfg.hist_low) {
        return Err(Error::param("invalid histogram range"));
    }
    let mut goals = cfg.goals.clone();
    if !goals.contains(&0.0) {
        goals.push(0.0);
    }
    let unit_id = |c: &CheckpointRef| format!("goals/{}", c.model_id);
    let todo: Vec<&CheckpointRef> = checkpoints.iter().filter(|c| !store.contains(&unit_id(c))).collect();
    for chunk in todo.chunks(8) {
        let results = parallel::map_slice(chunk, |c| -> Result<Unit> {
            let model = load_checkpoint(&c.path)?;
            let mut rows = Vec::new();
            let mut histogram = None;
            for &g in &goals {
                let params = cfg.eval.env.with_goal(g);
                let episodes = cfg.eval.episodes(&model, &params)?;
                let rewards: Vec<f64> = episodes.iter().map(|e| e.total_reward).collect();
                if g == 0.0 {
                    let xs: Vec<f64> = episodes.iter().flat_map(|e| e.states.iter().map(|s| s.x)).collect();
                    histogram = Some(XHistogram::from_positions(&c.model_id, &xs, cfg.hist_low, cfg.hist_high, cfg.bin_width));
                }
                if cfg.goals.contains(&g) {
                    rows.push(GoalRow {
                        model_id: c.model_id.clone(),
                        goal: g,
                        mean_reward: mean(&rewards),
                        reward_per_episode: rewards,
                    });
                }
            }
            Ok(Unit {
                rows,
                histogram: histogram.expect("goal 0 evaluated"),
            })
        });
        for (c, r) in chunk.iter().zip(results) {
            store.put(&unit_id(c), &r?)?;
        }
    }
    let mut rows = Vec::new();
    let mut histograms = Vec::new();
    for c in checkpoints {
        let u: Unit = store.get(&unit_id(c))?.expect("stored above");
        rows.extend(u.rows);
        histograms.push(u.histogram);
    }
    Ok(GoalResult { rows, histograms })
}

/// Mean reward over `rows` whose goal has absolute value `abs_goal`.
pub fn mean_reward_at(rows: &[GoalRow], abs_goal: f64) -> Option<f64> {
    let r: Vec<f64> = rows.iter().filter(|r| r.goal.abs() == abs_goal).map(|r| r.mean_reward).collect();
    (!r.is_empty()).then(|| mean(&r))
}

pub fn write_goal_csv(path: &Path, rows: &[GoalRow]) -> Result<()> {
    let header = ["model_id", "goal", "mean_reward"].map(String::from);
    write_csv(
        path,
        &header,
        rows.iter().map(|r| vec![r.model_id.clone(), fmt_f64(r.goal), fmt_f64(r.mean_reward)]),
    )
}

pub fn write_histogram_csv(path: &Path, hists: &[XHistogram]) -> Result<()> {
    let header = ["model_id", "bin_low", "bin_high", "count"].map(String::from);
    write_csv(
        path,
        &header,
        hists.iter().flat_map(|h| {
            h.counts.iter().enumerate().map(move |(i, c)| {
                let lo = h.low + i as f64 * h.bin_width;
                vec![h.model_id.clone(), fmt_f64(lo), fmt_f64(lo + h.bin_width), c.to_string()]
            })
        }),
    )
}
