//! Model-predictive control over a dynamics oracle.
//!
//! Candidate action sequences are scored by expectation propagation: each
//! step moves to the oracle's expected next state, and the reward is taken at
//! that predicted state.

mod cem;
mod oracle;

use ndarray::{Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::env::{rollout, CartpoleParams, CartpoleState, EpisodeResult, Policy};
use crate::error::{Error, Result};
use crate::parallel;
use crate::seeding;

pub use cem::{plan_cem, plan_random};
pub use oracle::{CartpoleDynamics, CartpoleReward, Dynamics, RewardFn};

/// Candidates per parallel evaluation task. Fixed so results do not depend
/// on the worker count.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerMethod {
    #[default]
    Cem,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub method: PlannerMethod,
    pub horizon: usize,
    pub n_candidates: usize,
    pub n_elites: usize,
    pub cem_iterations: usize,
    /// Weight kept on the previous mean/std in each CEM update.
    pub smoothing: f64,
    pub action_low: f64,
    pub action_high: f64,
    /// Initial per-step sampling std; `None` means half the bound width.
    pub init_std: Option<f64>,
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            method: PlannerMethod::Cem,
            horizon: 25,
            n_candidates: 400,
            n_elites: 40,
            cem_iterations: 5,
            smoothing: 0.1,
            action_low: -1.0,
            action_high: 1.0,
            init_std: None,
            warm_start: true,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn random_shooting() -> Self {
        Self {
            method: PlannerMethod::Random,
            n_candidates: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.n_candidates == 0 {
            return Err(Error::param("horizon and n_candidates must be positive"));
        }
        if self.method == PlannerMethod::Cem && (self.n_elites == 0 || self.n_elites > self.n_candidates) {
            return Err(Error::param("need 1 <= n_elites <= n_candidates"));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::param("smoothing must be in [0, 1)"));
        }
        if !(self.action_low < self.action_high) {
            return Err(Error::param("action bounds are empty"));
        }
        Ok(())
    }

    pub fn initial_std(&self) -> f64 {
        self.init_std
            .unwrap_or(0.5 * (self.action_high - self.action_low))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPlan {
    /// `horizon x action_dim`.
    pub actions: Array2<f64>,
    pub predicted_return: f64,
    /// Mean return of the elite set at each CEM iteration.
    pub elite_history: Vec<f64>,
    /// Best return seen so far at each iteration.
    pub best_history: Vec<f64>,
    /// Candidates discarded because their rollout left the finite range.
    pub diverged: usize,
}

impl ActionPlan {
    pub fn first_action(&self) -> ArrayView1<'_, f64> {
        self.actions.row(0)
    }
}

/// Returns of `candidates` (`n x horizon x action_dim`) from `s0`.
/// Candidates whose rollout leaves the finite range score `-inf`.
pub fn evaluate_candidates<D, R>(
    oracle: &D,
    reward: &R,
    s0: &[f64],
    candidates: &Array3<f64>,
) -> Vec<f64>
where
    D: Dynamics + ?Sized,
    R: RewardFn + ?Sized,
{
    let n = candidates.len_of(Axis(0));
    let chunks = n.div_ceil(EVAL_CHUNK);
    parallel::map_range(chunks, |c| {
        let lo = c * EVAL_CHUNK;
        let hi = (lo + EVAL_CHUNK).min(n);
        evaluate_chunk(oracle, reward, s0, candidates.slice(ndarray::s![lo..hi, .., ..]))
    })
    .into_iter()
    .flatten()
    .collect()
}

fn evaluate_chunk<D, R>(
    oracle: &D,
    reward: &R,
    s0: &[f64],
    candidates: ndarray::ArrayView3<f64>,
) -> Vec<f64>
where
    D: Dynamics + ?Sized,
    R: RewardFn + ?Sized,
{
    let (n, horizon, _) = candidates.dim();
    let mut states = Array2::from_shape_fn((n, s0.len()), |(_, j)| s0[j]);
    let mut returns = vec![0.0; n];
    let mut alive = vec![true; n];
    for t in 0..horizon {
        let actions = candidates.index_axis(Axis(1), t);
        states = oracle.predict_next(states.view(), actions);
        for (i, row) in states.outer_iter().enumerate() {
            if !alive[i] {
                continue;
            }
            let s = row.as_slice().expect("standard layout");
            if s.iter().any(|v| !v.is_finite()) {
                alive[i] = false;
                continue;
            }
            let a = actions.row(i);
            returns[i] += reward.reward(s, a.as_slice().expect("standard layout"));
        }
    }
    returns
        .into_iter()
        .zip(alive)
        .map(|(r, ok)| if ok && r.is_finite() { r } else { f64::NEG_INFINITY })
        .collect()
}

/// Return of a single `horizon x action_dim` action sequence.
pub fn evaluate_sequence<D, R>(oracle: &D, reward: &R, s0: &[f64], actions: &Array2<f64>) -> f64
where
    D: Dynamics + ?Sized,
    R: RewardFn + ?Sized,
{
    let batch = actions.clone().insert_axis(Axis(0));
    evaluate_candidates(oracle, reward, s0, &batch)[0]
}

/// Plan from `s0` with whichever method `config` selects.
pub fn plan<D, R>(
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
    match config.method {
        PlannerMethod::Cem => plan_cem(oracle, reward, s0, config, warm_mean),
        PlannerMethod::Random => plan_random(oracle, reward, s0, config),
    }
}

/// Receding-horizon controller: plan every step, execute the first action.
pub struct MpcPolicy<'a, D: ?Sized, R: ?Sized> {
    oracle: &'a D,
    reward: &'a R,
    config: PlannerConfig,
    previous: Option<Array2<f64>>,
    episode_seed: u64,
    step: u64,
    /// Plans made since the last [`Policy::begin_episode`], when recording.
    pub recorded: Option<Vec<ActionPlan>>,
    pub diverged: usize,
}

impl<'a, D, R> MpcPolicy<'a, D, R>
where
    D: Dynamics + ?Sized,
    R: RewardFn + ?Sized,
{
    pub fn new(oracle: &'a D, reward: &'a R, config: PlannerConfig) -> Self {
        Self {
            oracle,
            reward,
            config,
            previous: None,
            episode_seed: 0,
            step: 0,
            recorded: None,
            diverged: 0,
        }
    }

    pub fn recording(mut self) -> Self {
        self.recorded = Some(Vec::new());
        self
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.config
    }

    /// Plan from an arbitrary state without touching the warm-start buffer.
    pub fn plan_at(&self, s0: &[f64], seed: u64) -> Result<ActionPlan> {
        let config = PlannerConfig {
            seed,
            ..self.config.clone()
        };
        plan(self.oracle, self.reward, s0, &config, None)
    }

    pub fn act_on(&mut self, s0: &[f64]) -> Result<Array2<f64>> {
        let seed = seeding::derive2(self.config.seed, self.episode_seed, self.step);
        self.step += 1;
        let config = PlannerConfig {
            seed,
            ..self.config.clone()
        };
        let warm = if self.config.warm_start {
            self.previous.as_ref()
        } else {
            None
        };
        let plan = plan(self.oracle, self.reward, s0, &config, warm)?;
        self.diverged += plan.diverged;
        if self.config.warm_start {
            let mut shifted = Array2::zeros(plan.actions.raw_dim());
            let h = plan.actions.nrows();
            shifted
                .slice_mut(ndarray::s![..h - 1, ..])
                .assign(&plan.actions.slice(ndarray::s![1.., ..]));
            self.previous = Some(shifted);
        }
        let actions = plan.actions.clone();
        if let Some(rec) = self.recorded.as_mut() {
            rec.push(plan);
        }
        Ok(actions)
    }
}

impl<D, R> Policy for MpcPolicy<'_, D, R>
where
    D: Dynamics + ?Sized,
    R: RewardFn + ?Sized,
{
    fn act(&mut self, state: &CartpoleState) -> Result<f64> {
        Ok(self.act_on(&state.to_array())?[[0, 0]])
    }

    fn begin_episode(&mut self, seed: u64) {
        self.previous = None;
        self.episode_seed = seed;
        self.step = 0;
        if let Some(rec) = self.recorded.as_mut() {
            rec.clear();
        }
    }
}

/// Cartpole episodes controlled by MPC through `oracle`, one per seed.
pub fn mpc_episodes<D: Dynamics + ?Sized>(
    oracle: &D,
    config: &PlannerConfig,
    params: &CartpoleParams,
    seeds: &[u64],
    horizon: usize,
) -> Result<Vec<EpisodeResult>> {
    let reward = CartpoleReward::new(params.clone());
    let mut policy = MpcPolicy::new(oracle, &reward, config.clone());
    seeds.iter().map(|&seed| rollout(&mut policy, horizon, seed, params)).collect()
}

#[cfg(test)]
mod tests;
