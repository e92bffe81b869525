//! Plans of two models side by side along a reference episode.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::store::{fmt_f64, write_csv};
use crate::env::{CartpoleParams, EpisodeResult};
use crate::error::{Error, Result};
use crate::model::DynamicsModel;
use crate::planner::{plan, CartpoleReward, PlannerConfig};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanComparison {
    pub step: usize,
    pub state: Vec<f64>,
    pub actions_a: Vec<f64>,
    pub actions_b: Vec<f64>,
    pub return_a: f64,
    pub return_b: f64,
}

impl PlanComparison {
    /// Euclidean distance between the two action sequences.
    pub fn divergence(&self) -> f64 {
        self.actions_a
            .iter()
            .zip(&self.actions_b)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Plan from every state of `episode` with both models, using the same
/// sampling seed for both at each step.
pub fn compare_plans(
    model_a: &DynamicsModel,
    model_b: &DynamicsModel,
    episode: &EpisodeResult,
    planner: &PlannerConfig,
    params: &CartpoleParams,
) -> Result<Vec<PlanComparison>> {
    if model_a.state_dim() != model_b.state_dim() || model_a.action_dim() != model_b.action_dim() {
        return Err(Error::DimensionMismatch {
            expected: model_a.state_dim() + model_a.action_dim(),
            got: model_b.state_dim() + model_b.action_dim(),
        });
    }
    let reward = CartpoleReward::new(params.clone());
    episode
        .actions
        .iter()
        .enumerate()
        .map(|(step, _)| {
            let s = episode.states[step].to_array();
            let cfg = PlannerConfig {
                seed: seeding::derive2(planner.seed, 0xc0c0, step as u64),
                ..planner.clone()
            };
            let pa = plan(model_a, &reward, &s, &cfg, None)?;
            let pb = plan(model_b, &reward, &s, &cfg, None)?;
            Ok(PlanComparison {
                step,
                state: s.to_vec(),
                actions_a: pa.actions.iter().copied().collect(),
                actions_b: pb.actions.iter().copied().collect(),
                return_a: pa.predicted_return,
                return_b: pb.predicted_return,
            })
        })
        .collect()
}

pub fn write_plans_csv(path: &Path, rows: &[PlanComparison]) -> Result<()> {
    let h = rows.first().map_or(0, |r| r.actions_a.len());
    let d = rows.first().map_or(0, |r| r.state.len());
    let mut header: Vec<String> = vec!["step".into()];
    header.extend((0..d).map(|i| format!("s{i}")));
    header.extend(["return_a", "return_b", "divergence"].map(String::from));
    header.extend((0..h).map(|i| format!("a{i}")));
    header.extend((0..h).map(|i| format!("b{i}")));
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.step.to_string()];
            row.extend(r.state.iter().map(|v| fmt_f64(*v)));
            row.extend([fmt_f64(r.return_a), fmt_f64(r.return_b), fmt_f64(r.divergence())]);
            row.extend(r.actions_a.iter().chain(&r.actions_b).map(|v| fmt_f64(*v)));
            row
        }),
    )
}
