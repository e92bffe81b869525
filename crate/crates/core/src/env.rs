//! Swing-up cart-pole with a goal-shifted tip-distance reward.
//!
//! Angles are measured from upright, so the pole hangs at `theta = pi`.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const STATE_DIM: usize = 4;
pub const ACTION_DIM: usize = 1;
/// Index of the pole angle in the state vector.
pub const ANGLE_INDEX: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartpoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartpoleState {
    pub const fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        Self {
            x,
            x_dot,
            theta,
            theta_dot,
        }
    }

    pub fn hanging() -> Self {
        Self::new(0.0, 0.0, std::f64::consts::PI, 0.0)
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != STATE_DIM {
            return Err(Error::DimensionMismatch {
                expected: STATE_DIM,
                got: s.len(),
            });
        }
        Ok(Self::new(s[0], s[1], s[2], s[3]))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub pole_length: f64,
    pub gravity: f64,
    pub force_scale: f64,
    pub dt: f64,
    pub substeps: usize,
    pub x_goal: f64,
    pub reward_lengthscale: f64,
    pub action_penalty: f64,
    /// Standard deviation of the Gaussian noise added at reset.
    pub reset_std: f64,
}

impl Default for CartpoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.3,
            gravity: 9.81,
            force_scale: 10.0,
            dt: 0.05,
            substeps: 4,
            x_goal: 0.0,
            reward_lengthscale: 0.6,
            action_penalty: 0.01,
            reset_std: 0.01,
        }
    }
}

impl CartpoleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_length", self.pole_length),
            ("dt", self.dt),
            ("reward_lengthscale", self.reward_lengthscale),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(Error::param("substeps must be positive"));
        }
        if !(self.reset_std >= 0.0) || !self.x_goal.is_finite() {
            return Err(Error::param("reset_std must be >= 0 and x_goal finite"));
        }
        Ok(())
    }

    pub fn with_goal(&self, x_goal: f64) -> Self {
        Self {
            x_goal,
            ..self.clone()
        }
    }

    /// Full pole length, the radius of the tip circle.
    pub fn tip_length(&self) -> f64 {
        2.0 * self.pole_length
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let w = theta - 2.0 * PI * ((theta + PI) / (2.0 * PI)).floor();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

fn derivative(s: [f64; 4], force: f64, p: &CartpoleParams) -> [f64; 4] {
    let [_, x_dot, theta, theta_dot] = s;
    let total = p.cart_mass + p.pole_mass;
    let (sin, cos) = theta.sin_cos();
    let temp = (force + p.pole_mass * p.pole_length * theta_dot * theta_dot * sin) / total;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.pole_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
    let x_acc = temp - p.pole_mass * p.pole_length * theta_acc * cos / total;
    [x_dot, x_acc, theta_dot, theta_acc]
}

fn axpy(s: [f64; 4], k: [f64; 4], h: f64) -> [f64; 4] {
    [s[0] + h * k[0], s[1] + h * k[1], s[2] + h * k[2], s[3] + h * k[3]]
}

/// Advance raw state by one control period with RK4; the angle is not wrapped.
pub(crate) fn integrate(mut s: [f64; 4], action: f64, p: &CartpoleParams) -> [f64; 4] {
    let force = action * p.force_scale;
    let h = p.dt / p.substeps as f64;
    for _ in 0..p.substeps {
        let k1 = derivative(s, force, p);
        let k2 = derivative(axpy(s, k1, h / 2.0), force, p);
        let k3 = derivative(axpy(s, k2, h / 2.0), force, p);
        let k4 = derivative(axpy(s, k3, h), force, p);
        for i in 0..4 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    s
}

pub fn step(state: &CartpoleState, action: f64, params: &CartpoleParams) -> Result<CartpoleState> {
    if !state.is_finite() || !action.is_finite() {
        return Err(Error::InvalidState(format!("{state:?}, action {action}")));
    }
    let [x, x_dot, theta, theta_dot] = integrate(state.to_array(), action, params);
    Ok(CartpoleState::new(x, x_dot, wrap_angle(theta), theta_dot))
}

/// Squared distance between the pole tip and the goal tip position.
fn tip_distance_sq(x: f64, theta: f64, p: &CartpoleParams) -> f64 {
    let l = p.tip_length();
    let dx = x + l * theta.sin() - p.x_goal;
    let dy = l * theta.cos() - l;
    dx * dx + dy * dy
}

pub fn reward(state: &CartpoleState, action: f64, params: &CartpoleParams) -> f64 {
    reward_raw(state.x, state.theta, action, params)
}

pub(crate) fn reward_raw(x: f64, theta: f64, action: f64, p: &CartpoleParams) -> f64 {
    let d2 = tip_distance_sq(x, theta, p);
    let l2 = p.reward_lengthscale * p.reward_lengthscale;
    (-d2 / l2).exp() - p.action_penalty * action * action
}

/// Total mechanical energy (kinetic plus potential, zero at the pivot height).
pub fn energy(state: &CartpoleState, params: &CartpoleParams) -> f64 {
    let (m_c, m_p, l) = (params.cart_mass, params.pole_mass, params.pole_length);
    let CartpoleState {
        x_dot,
        theta,
        theta_dot,
        ..
    } = *state;
    let kinetic = 0.5 * (m_c + m_p) * x_dot * x_dot
        + m_p * l * x_dot * theta_dot * theta.cos()
        + 0.5 * (4.0 / 3.0) * m_p * l * l * theta_dot * theta_dot;
    kinetic + m_p * params.gravity * l * theta.cos()
}

pub fn reset(seed: u64, params: &CartpoleParams) -> CartpoleState {
    let hanging = CartpoleState::hanging();
    if params.reset_std == 0.0 {
        return hanging;
    }
    let mut rng = seeding::rng(seed);
    let noise = Normal::new(0.0, params.reset_std).expect("reset_std validated");
    let mut draw = || noise.sample(&mut rng);
    CartpoleState::new(draw(), draw(), wrap_angle(hanging.theta + draw()), draw())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub states: Vec<CartpoleState>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub total_reward: f64,
}

impl EpisodeResult {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Anything that maps the current state to a scalar action.
pub trait Policy {
    fn act(&mut self, state: &CartpoleState) -> Result<f64>;

    /// Called by [`rollout`] before the first step of each episode.
    fn begin_episode(&mut self, _seed: u64) {}
}

impl<F> Policy for F
where
    F: FnMut(&CartpoleState) -> Result<f64>,
{
    fn act(&mut self, state: &CartpoleState) -> Result<f64> {
        self(state)
    }
}

pub fn rollout<P: Policy + ?Sized>(
    policy: &mut P,
    horizon: usize,
    seed: u64,
    params: &CartpoleParams,
) -> Result<EpisodeResult> {
    policy.begin_episode(seed);
    rollout_from(reset(seed, params), policy, horizon, params)
}

/// Roll out `policy` for `horizon` steps from a given initial state.
pub fn rollout_from<P: Policy + ?Sized>(
    initial: CartpoleState,
    policy: &mut P,
    horizon: usize,
    params: &CartpoleParams,
) -> Result<EpisodeResult> {
    if horizon == 0 {
        return Err(Error::param("horizon must be at least 1"));
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut state = initial;
    states.push(state);
    for t in 0..horizon {
        let raw = policy.act(&state)?;
        if !raw.is_finite() {
            return Err(Error::NonFiniteAction { step: t, action: raw });
        }
        let action = raw.clamp(-1.0, 1.0);
        rewards.push(reward(&state, action, params));
        state = step(&state, action, params)?;
        actions.push(action);
        states.push(state);
    }
    let total_reward = rewards.iter().sum();
    Ok(EpisodeResult {
        states,
        actions,
        rewards,
        total_reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> CartpoleParams {
        CartpoleParams::default()
    }

    #[test]
    fn upright_equilibrium_is_fixed() {
        let s = step(&CartpoleState::new(0.0, 0.0, 0.0, 0.0), 0.0, &params()).unwrap();
        assert_eq!(s, CartpoleState::new(0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn hanging_equilibrium_is_fixed() {
        let s = step(&CartpoleState::hanging(), 0.0, &params()).unwrap();
        assert!(s.x.abs() < 1e-12 && s.x_dot.abs() < 1e-12 && s.theta_dot.abs() < 1e-12);
        assert!((s.theta.abs() - PI).abs() < 1e-12);
    }

    /// Fine-step explicit Euler on the same equations of motion.
    fn euler_oracle(s: [f64; 4], action: f64, p: &CartpoleParams, n: usize) -> [f64; 4] {
        let (m_c, m_p, l, g) = (p.cart_mass, p.pole_mass, p.pole_length, p.gravity);
        let f = action * p.force_scale;
        let h = p.dt / n as f64;
        let [mut x, mut xd, mut th, mut thd] = s;
        for _ in 0..n {
            let m = m_c + m_p;
            let tmp = (f + m_p * l * thd * thd * th.sin()) / m;
            let tha = (g * th.sin() - th.cos() * tmp) / (l * (4.0 / 3.0 - m_p * th.cos().powi(2) / m));
            let xa = tmp - m_p * l * tha * th.cos() / m;
            x += h * xd;
            xd += h * xa;
            th += h * thd;
            thd += h * tha;
        }
        [x, xd, th, thd]
    }

    #[test]
    fn small_tilt_falls_and_matches_fine_euler() {
        let p = params();
        let s0 = CartpoleState::new(0.0, 0.0, 0.1, 0.0);
        let s1 = step(&s0, 0.0, &p).unwrap();
        assert!(s1.theta > 0.1);
        // Euler converges at first order; 1e6 substeps keeps the global error
        // well under the 1e-6 relative tolerance.
        let oracle = euler_oracle(s0.to_array(), 0.0, &p, 1_000_000);
        for (a, b) in s1.to_array().iter().zip(oracle) {
            let scale = b.abs().max(1e-3);
            assert!((a - b).abs() / scale < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn invalid_state_rejected() {
        let bad = CartpoleState::new(f64::NAN, 0.0, 0.0, 0.0);
        assert!(matches!(step(&bad, 0.0, &params()), Err(Error::InvalidState(_))));
    }

    #[test]
    fn reward_examples() {
        let p = params();
        let up = CartpoleState::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(reward(&up, 0.0, &p), 1.0);
        assert!((reward(&up, 1.0, &p) - 0.99).abs() < 1e-15);
        let down = CartpoleState::hanging();
        assert!((reward(&down, 0.0, &p) - (-4.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn reset_is_seeded() {
        let p = params();
        assert_eq!(reset(11, &p), reset(11, &p));
        assert_ne!(reset(11, &p), reset(12, &p));
        let quiet = CartpoleParams {
            reset_std: 0.0,
            ..p
        };
        assert_eq!(reset(3, &quiet), CartpoleState::hanging());
    }

    #[test]
    fn reset_theta_spread_matches_std() {
        let p = params();
        let thetas: Vec<f64> = (0..1000)
            .map(|s| {
                let th = reset(s, &p).theta;
                // unwrap around pi
                if th < 0.0 {
                    th + 2.0 * PI
                } else {
                    th
                }
            })
            .collect();
        let mean = thetas.iter().sum::<f64>() / 1000.0;
        let var = thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / 999.0;
        let sd = var.sqrt();
        assert!((0.008..=0.012).contains(&sd), "std {sd}");
    }

    #[test]
    fn zero_policy_stays_down() {
        let p = params();
        let ep = rollout(&mut |_: &CartpoleState| Ok(0.0), 200, 5, &p).unwrap();
        assert_eq!(ep.states.len(), 201);
        assert_eq!(ep.rewards.len(), 200);
        let expected = 200.0 * (-4.0f64).exp();
        assert!((ep.total_reward - expected).abs() < 0.05, "{}", ep.total_reward);
        assert_eq!(ep.total_reward, ep.rewards.iter().sum::<f64>());
    }

    #[test]
    fn horizon_one_gives_one_reward() {
        let ep = rollout(&mut |_: &CartpoleState| Ok(0.3), 1, 0, &params()).unwrap();
        assert_eq!(ep.rewards.len(), 1);
        assert_eq!(ep.actions, vec![0.3]);
    }

    #[test]
    fn non_finite_action_reports_step() {
        let mut n = 0;
        let mut policy = |_: &CartpoleState| {
            n += 1;
            Ok(if n == 4 { f64::NAN } else { 0.0 })
        };
        match rollout(&mut policy, 10, 0, &params()) {
            Err(Error::NonFiniteAction { step, .. }) => assert_eq!(step, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn energy_is_conserved_without_force() {
        let p = params();
        let mut s = CartpoleState::new(0.0, 0.0, 2.0, 0.5);
        let e0 = energy(&s, &p);
        for _ in 0..200 {
            s = step(&s, 0.0, &p).unwrap();
        }
        let drift = (energy(&s, &p) - e0).abs() / e0.abs();
        assert!(drift < 1e-3, "relative drift {drift}");
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25) - 0.25).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn reward_in_range(x in -5.0..5.0f64, th in -4.0..4.0f64, a in -1.0..1.0f64) {
                let p = CartpoleParams::default();
                let r = reward(&CartpoleState::new(x, 0.0, th, 0.0), a, &p);
                prop_assert!(r > -p.action_penalty && r <= 1.0);
            }

            #[test]
            fn step_keeps_theta_wrapped(eps in 0.0..0.2f64, thd in -10.0..10.0f64, a in -1.0..1.0f64) {
                let p = CartpoleParams::default();
                for th in [PI - eps, -PI + eps] {
                    let s = step(&CartpoleState::new(0.0, 0.0, th, thd), a, &p).unwrap();
                    prop_assert!(s.theta > -PI && s.theta <= PI);
                    let again = step(&CartpoleState::new(0.0, 0.0, th, thd), a, &p).unwrap();
                    prop_assert_eq!(s, again);
                }
            }
        }
    }
}
