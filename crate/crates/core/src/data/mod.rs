//! Transition datasets: generators, distance filtering, splitting, batching
//! and CSV persistence.

mod batching;
mod distance;
mod io;
mod normalizer;

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{self, CartpoleParams, CartpoleState, EpisodeResult, Policy};
use crate::error::{Error, Result};
use crate::parallel;
use crate::seeding;

pub use batching::{batches, split, BatchMode, Batches};
pub use distance::{
    filter_by_distance, min_distance_to_expert, DistanceFilterSpec, DistanceMetric, DistancePool,
    ExpertDistance,
};
pub use io::{load, read_from, save, write_to};
pub use normalizer::{Normalizer, STD_FLOOR};

/// Points per RNG stream in the parallel generators.
const CHUNK: usize = 4096;
pub const DEFAULT_GRID_CAP: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub s_next: Vec<f64>,
    pub episode_id: Option<u64>,
    pub step_index: Option<u64>,
    /// Distance to the expert trajectory, when the set was distance-filtered.
    pub dstar: Option<f64>,
}

impl Transition {
    pub fn new(s: Vec<f64>, a: Vec<f64>, s_next: Vec<f64>) -> Self {
        Self {
            s,
            a,
            s_next,
            episode_id: None,
            step_index: None,
            dstar: None,
        }
    }

    /// Concatenated (s, a) vector.
    pub fn input(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.s.len() + self.a.len());
        v.extend_from_slice(&self.s);
        v.extend_from_slice(&self.a);
        v
    }

    fn is_finite(&self) -> bool {
        self.s
            .iter()
            .chain(&self.a)
            .chain(&self.s_next)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Grid,
    Sampled,
    OnPolicy,
    Expert,
    Filtered,
    Babble,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Provenance::Grid => "grid",
            Provenance::Sampled => "sampled",
            Provenance::OnPolicy => "on-policy",
            Provenance::Expert => "expert",
            Provenance::Filtered => "filtered",
            Provenance::Babble => "babble",
        };
        f.write_str(s)
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grid" => Provenance::Grid,
            "sampled" => Provenance::Sampled,
            "on-policy" => Provenance::OnPolicy,
            "expert" => Provenance::Expert,
            "filtered" => Provenance::Filtered,
            "babble" => Provenance::Babble,
            other => return Err(Error::param(format!("unknown provenance {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub transitions: Vec<Transition>,
    pub state_dim: usize,
    pub action_dim: usize,
    pub provenance: Option<Provenance>,
}

impl TransitionSet {
    pub fn new(state_dim: usize, action_dim: usize, provenance: Option<Provenance>) -> Self {
        Self {
            transitions: Vec::new(),
            state_dim,
            action_dim,
            provenance,
        }
    }

    pub fn from_transitions(
        transitions: Vec<Transition>,
        state_dim: usize,
        action_dim: usize,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        let set = Self {
            transitions,
            state_dim,
            action_dim,
            provenance,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn validate(&self) -> Result<()> {
        let mut last_episode = None;
        for t in &self.transitions {
            for (len, want) in [
                (t.s.len(), self.state_dim),
                (t.a.len(), self.action_dim),
                (t.s_next.len(), self.state_dim),
            ] {
                if len != want {
                    return Err(Error::DimensionMismatch {
                        expected: want,
                        got: len,
                    });
                }
            }
            if !t.is_finite() {
                return Err(Error::InvalidState("non-finite transition".into()));
            }
            if let Some(id) = t.episode_id {
                if last_episode.is_some_and(|last| id < last) {
                    return Err(Error::param("episode ids must be non-decreasing"));
                }
                last_episode = Some(id);
            }
        }
        Ok(())
    }

    pub fn has_episodes(&self) -> bool {
        !self.is_empty() && self.transitions.iter().all(|t| t.episode_id.is_some())
    }

    /// Append `other`, shifting its episode ids past ours.
    pub fn extend_episodes(&mut self, other: &TransitionSet) -> Result<()> {
        if other.state_dim != self.state_dim || other.action_dim != self.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: other.input_dim(),
            });
        }
        let offset = self.next_episode_id();
        self.transitions.extend(other.transitions.iter().map(|t| {
            let mut t = t.clone();
            t.episode_id = t.episode_id.map(|e| e + offset);
            t
        }));
        Ok(())
    }

    pub fn next_episode_id(&self) -> u64 {
        self.transitions
            .iter()
            .filter_map(|t| t.episode_id)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> TransitionSet {
        TransitionSet {
            transitions: indices.iter().map(|&i| self.transitions[i].clone()).collect(),
            state_dim: self.state_dim,
            action_dim: self.action_dim,
            provenance: self.provenance,
        }
    }

    pub fn inputs(&self) -> Vec<Vec<f64>> {
        self.transitions.iter().map(Transition::input).collect()
    }

    /// Split into contiguous runs sharing an episode id.
    pub fn episode_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.transitions.len() {
            if i == self.transitions.len()
                || self.transitions[i].episode_id != self.transitions[start].episode_id
            {
                out.push(start..i);
                start = i;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Periodic dimensions are sliced over (lo, hi] and wrapped.
    #[serde(default)]
    pub periodic: bool,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            periodic: false,
        }
    }

    pub const fn periodic(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            periodic: true,
        }
    }

    fn slice(&self, k: usize, n: usize) -> f64 {
        let w = self.hi - self.lo;
        if self.periodic {
            self.lo + w * (k + 1) as f64 / n as f64
        } else {
            self.lo + w * k as f64 / (n - 1) as f64
        }
    }

    fn sample(&self, u: f64) -> f64 {
        if self.periodic {
            // u in [0, 1) maps onto (lo, hi]
            self.hi - (self.hi - self.lo) * u
        } else {
            self.lo + (self.hi - self.lo) * u
        }
    }
}

/// Per-dimension bounds over the concatenated (s, a) space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub state: Vec<Interval>,
    pub action: Vec<Interval>,
}

impl Bounds {
    pub fn cartpole() -> Self {
        use std::f64::consts::PI;
        Self {
            state: vec![
                Interval::new(-3.0, 3.0),
                Interval::new(-8.0, 8.0),
                Interval::periodic(-PI, PI),
                Interval::new(-8.0, 8.0),
            ],
            action: vec![Interval::new(-1.0, 1.0)],
        }
    }

    pub fn dims(&self) -> usize {
        self.state.len() + self.action.len()
    }

    fn all(&self) -> impl Iterator<Item = &Interval> {
        self.state.iter().chain(&self.action)
    }

    pub fn validate(&self) -> Result<()> {
        for iv in self.all() {
            if !(iv.lo < iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(Error::param(format!("bad interval [{}, {}]", iv.lo, iv.hi)));
            }
        }
        Ok(())
    }

    /// Draw one (s, a) point from `u` values in [0, 1).
    fn sample_point(&self, rng: &mut seeding::Rng) -> Vec<f64> {
        self.all().map(|iv| iv.sample(rng.random::<f64>())).collect()
    }
}

/// Complete an (s, a) point with the true cart-pole transition.
fn complete(point: &[f64], params: &CartpoleParams) -> Result<Transition> {
    let (s, a) = point.split_at(env::STATE_DIM);
    let state = CartpoleState::from_slice(s)?;
    let next = env::step(&state, a[0], params)?;
    let mut s = s.to_vec();
    s[env::ANGLE_INDEX] = env::wrap_angle(s[env::ANGLE_INDEX]);
    Ok(Transition::new(s, a.to_vec(), next.to_array().to_vec()))
}

fn check_cartpole_bounds(bounds: &Bounds) -> Result<()> {
    bounds.validate()?;
    if bounds.state.len() != env::STATE_DIM || bounds.action.len() != env::ACTION_DIM {
        return Err(Error::DimensionMismatch {
            expected: env::STATE_DIM + env::ACTION_DIM,
            got: bounds.dims(),
        });
    }
    Ok(())
}

/// Evenly spaced grid values for `bounds`, last dimension varying fastest.
pub fn grid_points(bounds: &Bounds, slices: usize, cap: usize) -> Result<Vec<Vec<f64>>> {
    if slices < 2 {
        return Err(Error::param("slices_per_dim must be at least 2"));
    }
    bounds.validate()?;
    let dims = bounds.dims();
    let total = (0..dims).try_fold(1usize, |acc, _| acc.checked_mul(slices));
    let total = match total {
        Some(t) if t <= cap => t,
        _ => {
            return Err(Error::param(format!(
                "grid of {slices}^{dims} points exceeds cap {cap}"
            )))
        }
    };
    let axes: Vec<Vec<f64>> = bounds
        .all()
        .map(|iv| (0..slices).map(|k| iv.slice(k, slices)).collect())
        .collect();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; dims];
    for _ in 0..total {
        out.push(idx.iter().enumerate().map(|(d, &k)| axes[d][k]).collect());
        for d in (0..dims).rev() {
            idx[d] += 1;
            if idx[d] < slices {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

pub fn generate_grid(
    bounds: &Bounds,
    slices_per_dim: usize,
    cap: usize,
    params: &CartpoleParams,
) -> Result<TransitionSet> {
    check_cartpole_bounds(bounds)?;
    let points = grid_points(bounds, slices_per_dim, cap)?;
    let transitions = parallel::map_slice(&points, |p| complete(p, params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    TransitionSet::from_transitions(
        transitions,
        env::STATE_DIM,
        env::ACTION_DIM,
        Some(Provenance::Grid),
    )
}

/// `n` uniform points, drawn in fixed-size chunks with one RNG stream each.
pub fn sample_points(bounds: &Bounds, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let chunks = n.div_ceil(CHUNK);
    parallel::map_range(chunks, |c| {
        let mut rng = seeding::chunk_rng(seed, c as u64);
        let len = CHUNK.min(n - c * CHUNK);
        (0..len).map(|_| bounds.sample_point(&mut rng)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect()
}

pub fn generate_sampled(
    bounds: &Bounds,
    n: usize,
    seed: u64,
    params: &CartpoleParams,
) -> Result<TransitionSet> {
    check_cartpole_bounds(bounds)?;
    if n == 0 {
        return Err(Error::param("n must be at least 1"));
    }
    let points = sample_points(bounds, n, seed);
    let transitions = parallel::map_slice(&points, |p| complete(p, params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    TransitionSet::from_transitions(
        transitions,
        env::STATE_DIM,
        env::ACTION_DIM,
        Some(Provenance::Sampled),
    )
}

/// Convert an episode into transitions tagged with `episode_id`.
pub fn episode_transitions(ep: &EpisodeResult, episode_id: u64) -> Vec<Transition> {
    ep.actions
        .iter()
        .enumerate()
        .map(|(t, &a)| Transition {
            s: ep.states[t].to_array().to_vec(),
            a: vec![a],
            s_next: ep.states[t + 1].to_array().to_vec(),
            episode_id: Some(episode_id),
            step_index: Some(t as u64),
            dstar: None,
        })
        .collect()
}

pub fn episodes_to_set(episodes: &[EpisodeResult], provenance: Provenance) -> Result<TransitionSet> {
    let transitions = episodes
        .iter()
        .enumerate()
        .flat_map(|(i, ep)| episode_transitions(ep, i as u64))
        .collect();
    TransitionSet::from_transitions(transitions, env::STATE_DIM, env::ACTION_DIM, Some(provenance))
}

/// Episode seed for trial `trial` of a collection seeded with `seed`.
pub fn episode_seed(seed: u64, trial: usize) -> u64 {
    seeding::derive(seed, trial as u64)
}

pub fn collect_on_policy<P: Policy + ?Sized>(
    agent: &mut P,
    n_trials: usize,
    horizon: usize,
    seed: u64,
    params: &CartpoleParams,
) -> Result<TransitionSet> {
    let episodes = (0..n_trials)
        .map(|k| env::rollout(agent, horizon, episode_seed(seed, k), params))
        .collect::<Result<Vec<_>>>()?;
    episodes_to_set(&episodes, Provenance::OnPolicy)
}

/// Random-action rollouts of length `horizon` from the noise-free reset state.
pub fn collect_babble(
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
    params: &CartpoleParams,
) -> Result<TransitionSet> {
    let start = CartpoleState::hanging();
    let episodes = (0..n_rollouts)
        .map(|k| {
            let mut rng = seeding::rng(episode_seed(seed, k));
            let mut policy = |_: &CartpoleState| Ok(rng.random_range(-1.0..=1.0));
            env::rollout_from(start, &mut policy, horizon, params)
        })
        .collect::<Result<Vec<_>>>()?;
    episodes_to_set(&episodes, Provenance::Babble)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertSpec {
    pub horizon: usize,
    pub n_trials: usize,
    /// Episodes must exceed this total reward to be kept.
    pub reward_threshold: f64,
    pub max_attempts: usize,
}

impl Default for ExpertSpec {
    fn default() -> Self {
        Self {
            horizon: 200,
            n_trials: 12,
            reward_threshold: 0.0,
            max_attempts: 60,
        }
    }
}

/// Episodes from the MPC planner running on the true dynamics, filtered by reward.
pub fn collect_expert_episodes(
    spec: &ExpertSpec,
    planner: &crate::planner::PlannerConfig,
    seed: u64,
    params: &CartpoleParams,
) -> Result<Vec<EpisodeResult>> {
    use crate::planner::{CartpoleDynamics, CartpoleReward, MpcPolicy};
    let dynamics = CartpoleDynamics::new(params.clone());
    let reward = CartpoleReward::new(params.clone());
    let mut kept = Vec::new();
    let mut best = f64::NEG_INFINITY;
    for attempt in 0..spec.max_attempts {
        if kept.len() == spec.n_trials {
            break;
        }
        let mut policy = MpcPolicy::new(&dynamics, &reward, planner.clone());
        let ep = env::rollout(&mut policy, spec.horizon, episode_seed(seed, attempt), params)?;
        best = best.max(ep.total_reward);
        log::debug!("expert attempt {attempt}: reward {:.2}", ep.total_reward);
        if ep.total_reward > spec.reward_threshold {
            kept.push(ep);
        }
    }
    if kept.len() < spec.n_trials {
        return Err(Error::ExpertThreshold {
            threshold: spec.reward_threshold,
            attempts: spec.max_attempts,
            best,
        });
    }
    Ok(kept)
}

pub fn collect_expert(
    spec: &ExpertSpec,
    planner: &crate::planner::PlannerConfig,
    seed: u64,
    params: &CartpoleParams,
) -> Result<TransitionSet> {
    let episodes = collect_expert_episodes(spec, planner, seed, params)?;
    episodes_to_set(&episodes, Provenance::Expert)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_size_law_for_cartpole() {
        let set = generate_grid(&Bounds::cartpole(), 7, DEFAULT_GRID_CAP, &CartpoleParams::default())
            .unwrap();
        assert_eq!(set.len(), 16807);
    }

    #[test]
    fn grid_two_slices_one_dim() {
        let b = Bounds {
            state: vec![Interval::new(-1.0, 2.0)],
            action: vec![],
        };
        assert_eq!(grid_points(&b, 2, 100).unwrap(), vec![vec![-1.0], vec![2.0]]);
    }

    #[test]
    fn grid_three_slices_even() {
        let b = Bounds {
            state: vec![Interval::new(0.0, 1.0)],
            action: vec![],
        };
        assert_eq!(
            grid_points(&b, 3, 100).unwrap(),
            vec![vec![0.0], vec![0.5], vec![1.0]]
        );
    }

    #[test]
    fn periodic_grid_excludes_lower_end() {
        use std::f64::consts::PI;
        let b = Bounds {
            state: vec![Interval::periodic(-PI, PI)],
            action: vec![],
        };
        let pts = grid_points(&b, 4, 100).unwrap();
        assert_eq!(pts.last().unwrap()[0], PI);
        assert!(pts.iter().all(|p| p[0] > -PI));
    }

    #[test]
    fn grid_cap_enforced() {
        let err = grid_points(&Bounds::cartpole(), 7, 1000).unwrap_err();
        assert!(err.to_string().contains("exceeds cap"));
    }

    #[test]
    fn sampled_is_seeded_and_uniform() {
        let p = CartpoleParams::default();
        let b = Bounds::cartpole();
        let one = generate_sampled(&b, 1, 3, &p).unwrap();
        assert_eq!(one.len(), 1);
        let a = generate_sampled(&b, 10_000, 42, &p).unwrap();
        let again = generate_sampled(&b, 10_000, 42, &p).unwrap();
        assert_eq!(a, again);
        for (d, iv) in b.state.iter().chain(&b.action).enumerate() {
            let vals: Vec<f64> = a.transitions.iter().map(|t| t.input()[d]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let mid = 0.5 * (iv.lo + iv.hi);
            let se = (iv.hi - iv.lo) / 12f64.sqrt() / (vals.len() as f64).sqrt();
            assert!((mean - mid).abs() < 3.0 * se, "dim {d}: {mean} vs {mid}");
        }
    }

    #[test]
    fn on_policy_chains_states() {
        let p = CartpoleParams::default();
        let mut policy = |s: &CartpoleState| Ok((s.theta_dot * 0.3).sin());
        let set = collect_on_policy(&mut policy, 2, 200, 9, &p).unwrap();
        assert_eq!(set.len(), 400);
        assert_eq!(set.episode_ranges(), vec![0..200, 200..400]);
        for w in set.transitions.windows(2) {
            if w[0].episode_id == w[1].episode_id {
                assert_eq!(w[0].s_next, w[1].s);
            }
        }
    }

    #[test]
    fn babble_counts() {
        let p = CartpoleParams::default();
        let one = collect_babble(1, 10, 0, &p).unwrap();
        assert_eq!(one.len(), 10);
        assert_eq!(one.transitions[0].s, CartpoleState::hanging().to_array().to_vec());
        let twenty = collect_babble(20, 10, 0, &p).unwrap();
        assert_eq!(twenty.len(), 200);
    }

    #[test]
    fn extend_shifts_episode_ids() {
        let p = CartpoleParams::default();
        let mut a = collect_babble(2, 3, 0, &p).unwrap();
        let b = collect_babble(2, 3, 1, &p).unwrap();
        a.extend_episodes(&b).unwrap();
        assert_eq!(a.episode_ranges().len(), 4);
        assert!(a.validate().is_ok());
    }
}
