//! Output-layer attacks: lower a model's control reward while keeping its
//! validation likelihood.

mod cma;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cma::{cma_es_minimize, CmaConfig, CmaEs, CmaResult, CovarianceMode, GenerationRecord, StopReason, SIGMA_FLOOR};

use crate::data::{episode_seed, TransitionSet};
use crate::env::CartpoleParams;
use crate::error::{Error, Result};
use crate::model::DynamicsModel;
use crate::parallel;
use crate::planner::{mpc_episodes, PlannerConfig};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub population: usize,
    pub parents: Option<usize>,
    /// `None`: 0.05 times the standard deviation of the output-layer weights.
    pub sigma0: Option<f64>,
    pub max_generations: usize,
    pub trials_per_eval: usize,
    pub episode_horizon: usize,
    pub ll_penalty_coeff: f64,
    /// Allowed drop of mean validation LL, in nats.
    pub ll_tolerance: f64,
    pub mode: CovarianceMode,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            population: 16,
            parents: None,
            sigma0: None,
            max_generations: 300,
            trials_per_eval: 5,
            episode_horizon: 200,
            ll_penalty_coeff: 2e5,
            ll_tolerance: 0.05,
            mode: CovarianceMode::Diagonal,
            seed: 0,
        }
    }
}

impl AttackConfig {
    fn validate(&self) -> Result<()> {
        if self.trials_per_eval == 0 || self.episode_horizon == 0 {
            return Err(Error::param("trials_per_eval and episode_horizon must be positive"));
        }
        if !(self.ll_penalty_coeff >= 0.0) || !(self.ll_tolerance >= 0.0) {
            return Err(Error::param("penalty coefficient and tolerance must be non-negative"));
        }
        Ok(())
    }

    /// Seeds of the episodes every candidate is scored on.
    pub fn episode_seeds(&self) -> Vec<u64> {
        let base = seeding::derive(self.seed, 0xa77ac);
        (0..self.trials_per_eval).map(|i| episode_seed(base, i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub reward: f64,
    pub ll: f64,
}

impl Evaluation {
    pub fn feasible(&self, baseline_ll: f64, tolerance: f64) -> bool {
        self.ll >= baseline_ll - tolerance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackGeneration {
    pub generation: usize,
    /// Fitness of the generation's best member.
    pub best_fitness: f64,
    pub sigma: f64,
    pub reward: f64,
    pub ll: f64,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub baseline: Evaluation,
    pub final_eval: Evaluation,
    pub history: Vec<AttackGeneration>,
    pub model: DynamicsModel,
    pub stop: Option<StopReason>,
}

/// Mean return of MPC episodes planned through `model`.
pub fn mean_reward(
    model: &DynamicsModel,
    planner: &PlannerConfig,
    params: &CartpoleParams,
    seeds: &[u64],
    horizon: usize,
) -> Result<f64> {
    let episodes = mpc_episodes(model, planner, params, seeds, horizon)?;
    Ok(episodes.iter().map(|e| e.total_reward).sum::<f64>() / episodes.len() as f64)
}

/// Mean log-likelihood per transition of `set`.
pub fn mean_ll(model: &DynamicsModel, set: &TransitionSet) -> Result<f64> {
    let ll = model.sample_log_likelihood(set)?;
    Ok(ll.iter().sum::<f64>() / ll.len() as f64)
}

/// Reward plus a hinge penalty on the LL drop; failures score `+inf`.
pub fn fitness(
    candidate: &[f64],
    model: &DynamicsModel,
    val_set: &TransitionSet,
    planner: &PlannerConfig,
    params: &CartpoleParams,
    config: &AttackConfig,
    baseline_ll: f64,
) -> Result<Evaluation> {
    let perturbed = model.with_output_layer(candidate)?;
    let ll = mean_ll(&perturbed, val_set)?;
    let reward = mean_reward(&perturbed, planner, params, &config.episode_seeds(), config.episode_horizon)
        .unwrap_or(f64::NAN);
    let penalty = config.ll_penalty_coeff * (baseline_ll - ll - config.ll_tolerance).max(0.0);
    let fitness = reward + penalty;
    Ok(Evaluation {
        fitness: if fitness.is_finite() { fitness } else { f64::INFINITY },
        reward,
        ll,
    })
}

fn weight_std(model: &DynamicsModel) -> f64 {
    let w: Vec<f64> = model
        .networks()
        .flat_map(|n| n.layers.last().expect("output layer").weight.iter().copied().collect::<Vec<_>>())
        .collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    (w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64).sqrt()
}

/// CMA-ES over the output layer. The returned model is the lowest-reward
/// candidate whose LL stays within tolerance.
pub fn attack(
    model: &DynamicsModel,
    val_set: &TransitionSet,
    params: &CartpoleParams,
    planner: &PlannerConfig,
    config: &AttackConfig,
) -> Result<AttackResult> {
    config.validate()?;
    planner.validate()?;
    if val_set.is_empty() {
        return Err(Error::param("attack needs a validation set"));
    }
    let x0 = model.output_layer_params();
    let baseline_ll = mean_ll(model, val_set)?;
    let baseline_reward = mean_reward(model, planner, params, &config.episode_seeds(), config.episode_horizon)?;
    let baseline = Evaluation {
        fitness: baseline_reward,
        reward: baseline_reward,
        ll: baseline_ll,
    };
    if config.max_generations == 0 {
        return Ok(AttackResult {
            baseline,
            final_eval: baseline,
            history: Vec::new(),
            model: model.clone(),
            stop: None,
        });
    }
    let sigma0 = match config.sigma0 {
        Some(s) => s,
        None => 0.05 * weight_std(model),
    };
    let cma_config = CmaConfig {
        population: config.population,
        parents: config.parents,
        sigma0,
        max_generations: config.max_generations,
        mode: config.mode,
        seed: seeding::derive(config.seed, 0xc3a),
    };
    let mut es = CmaEs::new(&x0, &cma_config)?;
    let mut best: Option<(Evaluation, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxGenerations;
    for g in 0..config.max_generations {
        if es.collapsed() {
            stop = StopReason::SigmaCollapse;
            break;
        }
        let sigma = es.sigma();
        let candidates = es.ask();
        let evals = parallel::map_slice(&candidates, |x| fitness(x, model, val_set, planner, params, config, baseline_ll))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let fit: Vec<f64> = evals.iter().map(|e| e.fitness).collect();
        let top = (0..evals.len())
            .min_by(|&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b)))
            .expect("non-empty population");
        history.push(AttackGeneration {
            generation: g + 1,
            best_fitness: evals[top].fitness,
            sigma,
            reward: evals[top].reward,
            ll: evals[top].ll,
        });
        for (e, x) in evals.iter().zip(&candidates) {
            let better = best.as_ref().is_none_or(|(b, _)| e.reward < b.reward);
            if e.reward.is_finite() && e.feasible(baseline_ll, config.ll_tolerance) && better {
                best = Some((*e, x.clone()));
            }
        }
        log::debug!("attack generation {} best fitness {:.3}", g + 1, evals[top].fitness);
        es.tell(&fit)?;
    }
    let (final_eval, params_best) = best.ok_or(Error::AttackInfeasible)?;
    Ok(AttackResult {
        baseline,
        final_eval,
        history,
        model: model.with_output_layer(&params_best)?,
        stop: Some(stop),
    })
}

/// Per-generation convergence CSV.
pub fn write_convergence_csv(path: &Path, history: &[AttackGeneration]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["generation", "best_fitness", "sigma", "reward", "ll"])?;
    for h in history {
        w.write_record([
            h.generation.to_string(),
            h.best_fitness.to_string(),
            h.sigma.to_string(),
            h.reward.to_string(),
            h.ll.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
