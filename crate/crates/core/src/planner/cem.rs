use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{evaluate_candidates, evaluate_sequence, ActionPlan, Dynamics, PlannerConfig, RewardFn};
use crate::error::{Error, Result};
use crate::seeding;

/// Indices of the `k` largest returns; ties go to the lower index.
fn top_k(returns: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..returns.len()).collect();
    idx.sort_by(|&a, &b| returns[b].total_cmp(&returns[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn plan_cem<D, R>(
    oracle: &D,
    reward: &R,
    s0: &[f64],
    config: &PlannerConfig,
    warm_mean: Option<&Array2<f64>>,
) -> Result<ActionPlan>
where
    D: Dynamics + ?Sized,
    R: RewardFn + ?Sized,
{
    config.validate()?;
    let (h, da) = (config.horizon, oracle.action_dim());
    let (lo, hi) = (config.action_low, config.action_high);
    let mut mean = match warm_mean {
        Some(m) if m.dim() == (h, da) => m.mapv(|v| v.clamp(lo, hi)),
        Some(m) => {
            return Err(Error::DimensionMismatch {
                expected: h * da,
                got: m.len(),
            })
        }
        None => Array2::zeros((h, da)),
    };
    let mut std = Array2::from_elem((h, da), config.initial_std());
    let mut rng = seeding::rng(config.seed);
    let alpha = config.smoothing;
    let n = config.n_candidates;
    let mut elite_history = Vec::with_capacity(config.cem_iterations);
    let mut best_history = Vec::with_capacity(config.cem_iterations);
    let mut best = f64::NEG_INFINITY;
    let mut diverged = 0;

    for _ in 0..config.cem_iterations {
        let mut cands = Array3::<f64>::zeros((n, h, da));
        for mut c in cands.outer_iter_mut() {
            for ((v, m), s) in c.iter_mut().zip(mean.iter()).zip(std.iter()) {
                let z: f64 = rng.sample(StandardNormal);
                *v = (m + s * z).clamp(lo, hi);
            }
        }
        let returns = evaluate_candidates(oracle, reward, s0, &cands);
        let finite = returns.iter().filter(|r| r.is_finite()).count();
        diverged += n - finite;
        if finite == 0 {
            return Err(Error::PlannerDiverged);
        }
        let elites = top_k(&returns, config.n_elites.min(finite));
        let k = elites.len() as f64;
        let elite_set = cands.select(Axis(0), &elites);
        let e_mean = elite_set.mean_axis(Axis(0)).expect("non-empty elites");
        let e_var = elite_set
            .map_axis(Axis(0), |col| {
                let m = col.mean().unwrap_or(0.0);
                col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / k
            });
        mean = &mean * alpha + &e_mean * (1.0 - alpha);
        std = &std * alpha + &e_var.mapv(f64::sqrt) * (1.0 - alpha);
        elite_history.push(elites.iter().map(|&i| returns[i]).sum::<f64>() / k);
        best = best.max(returns[elites[0]]);
        best_history.push(best);
    }

    let predicted_return = evaluate_sequence(oracle, reward, s0, &mean);
    if !predicted_return.is_finite() && best == f64::NEG_INFINITY {
        return Err(Error::PlannerDiverged);
    }
    Ok(ActionPlan {
        actions: mean,
        predicted_return,
        elite_history,
        best_history,
        diverged,
    })
}

pub fn plan_random<D, R>(oracle: &D, reward: &R, s0: &[f64], config: &PlannerConfig) -> Result<ActionPlan>
where
    D: Dynamics + ?Sized,
    R: RewardFn + ?Sized,
{
    config.validate()?;
    let (h, da, n) = (config.horizon, oracle.action_dim(), config.n_candidates);
    let mut rng = seeding::rng(config.seed);
    let cands = Array3::from_shape_simple_fn((n, h, da), || {
        rng.random_range(config.action_low..=config.action_high)
    });
    let returns = evaluate_candidates(oracle, reward, s0, &cands);
    let diverged = returns.iter().filter(|r| !r.is_finite()).count();
    if diverged == n {
        return Err(Error::PlannerDiverged);
    }
    let best = top_k(&returns, 1)[0];
    Ok(ActionPlan {
        actions: cands.index_axis(Axis(0), best).to_owned(),
        predicted_return: returns[best],
        elite_history: vec![returns[best]],
        best_history: vec![returns[best]],
        diverged,
    })
}
