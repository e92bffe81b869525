use ndarray::{Array2, ArrayView2};

use crate::env::{self, CartpoleParams};

/// Expected next state for a batch of (state, action) rows.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Rows are independent: the result for row `i` depends only on row `i`.
    fn predict_next(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64>;
}

pub trait RewardFn: Sync {
    fn reward(&self, state: &[f64], action: &[f64]) -> f64;
}

impl<F> RewardFn for F
where
    F: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    fn reward(&self, state: &[f64], action: &[f64]) -> f64 {
        self(state, action)
    }
}

/// The true cart-pole transition as a planning oracle.
#[derive(Debug, Clone)]
pub struct CartpoleDynamics {
    pub params: CartpoleParams,
}

impl CartpoleDynamics {
    pub fn new(params: CartpoleParams) -> Self {
        Self { params }
    }
}

impl Dynamics for CartpoleDynamics {
    fn state_dim(&self) -> usize {
        env::STATE_DIM
    }

    fn action_dim(&self) -> usize {
        env::ACTION_DIM
    }

    fn predict_next(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(states.raw_dim());
        for ((s, a), mut o) in states
            .outer_iter()
            .zip(actions.outer_iter())
            .zip(out.outer_iter_mut())
        {
            let a = a[0].clamp(-1.0, 1.0);
            let mut next = env::integrate([s[0], s[1], s[2], s[3]], a, &self.params);
            next[env::ANGLE_INDEX] = env::wrap_angle(next[env::ANGLE_INDEX]);
            for j in 0..4 {
                o[j] = next[j];
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CartpoleReward {
    pub params: CartpoleParams,
}

impl CartpoleReward {
    pub fn new(params: CartpoleParams) -> Self {
        Self { params }
    }
}

impl RewardFn for CartpoleReward {
    fn reward(&self, state: &[f64], action: &[f64]) -> f64 {
        env::reward_raw(state[0], state[2], action[0], &self.params)
    }
}
