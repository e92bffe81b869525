//! Learning speed as a function of random-rollout seed data.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pets::{run_pets, InitialData, PetsConfig};
use super::stats::first_exceeding;
use super::store::{fmt_f64, write_csv};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BabbleConfig {
    /// Number of random rollouts seeding each run.
    pub counts: Vec<usize>,
    pub rollout_horizon: usize,
    pub seeds: Vec<u64>,
    /// Reward a trial must exceed to count as learned.
    pub threshold: f64,
    pub pets: PetsConfig,
}

impl Default for BabbleConfig {
    fn default() -> Self {
        Self {
            counts: vec![20, 200, 400, 2000],
            rollout_horizon: 10,
            seeds: (0..5).collect(),
            threshold: 160.0,
            pets: PetsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BabbleCurve {
    pub count: usize,
    pub seed: u64,
    pub seeded_transitions: usize,
    pub rewards: Vec<f64>,
    /// First trial above the threshold, 1-based.
    pub trials_to_threshold: Option<usize>,
}

impl BabbleCurve {
    /// Trials to threshold, counting a never-reached threshold as one past the end.
    pub fn trials_or_censored(&self) -> usize {
        self.trials_to_threshold.unwrap_or(self.rewards.len() + 1)
    }
}

/// One PETS run per (count, seed), seeded with `count` babbling rollouts.
pub fn babble_study(cfg: &BabbleConfig, dir: &Path) -> Result<Vec<BabbleCurve>> {
    if cfg.counts.contains(&0) || cfg.counts.is_empty() {
        return Err(Error::param("babble counts must be at least 1"));
    }
    let mut out = Vec::new();
    for &count in &cfg.counts {
        let runs: Vec<Result<BabbleCurve>> = crate::parallel::map_slice(&cfg.seeds, |&seed| {
            let pets = PetsConfig {
                initial_data: InitialData::Babble {
                    rollouts: count,
                    horizon: cfg.rollout_horizon,
                },
                seed,
                ..cfg.pets.clone()
            };
            let run = run_pets(&pets, &[], &dir.join(format!("count-{count}")).join(format!("seed-{seed}")))?;
            let rewards = run.rewards();
            Ok(BabbleCurve {
                count,
                seed,
                seeded_transitions: count * cfg.rollout_horizon,
                trials_to_threshold: first_exceeding(&rewards, cfg.threshold),
                rewards,
            })
        });
        for r in runs {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn write_babble_csv(path: &Path, curves: &[BabbleCurve]) -> Result<()> {
    let header = ["count", "seed", "seeded_transitions", "trial", "reward"].map(String::from);
    write_csv(
        path,
        &header,
        curves.iter().flat_map(|c| {
            c.rewards.iter().enumerate().map(move |(t, r)| {
                vec![
                    c.count.to_string(),
                    c.seed.to_string(),
                    c.seeded_transitions.to_string(),
                    (t + 1).to_string(),
                    fmt_f64(*r),
                ]
            })
        }),
    )
}
