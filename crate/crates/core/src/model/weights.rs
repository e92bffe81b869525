//! Per-sample loss weights.

use serde::{Deserialize, Serialize};

use crate::data::TransitionSet;
use crate::env::{reward, CartpoleParams, CartpoleState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    #[default]
    None,
    /// `c * exp(-d*)` from the stored distance to the expert.
    Distance,
    /// Reward min-max scaled over the set.
    Reward,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" | "off" => WeightMode::None,
            "distance" | "on" => WeightMode::Distance,
            "reward" => WeightMode::Reward,
            other => return Err(Error::param(format!("unknown weight mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSpec {
    pub mode: WeightMode,
    pub c: f64,
    /// Distance mode only: samples with d* above this get weight 0.
    pub cutoff: Option<f64>,
}

impl Default for WeightSpec {
    fn default() -> Self {
        Self {
            mode: WeightMode::None,
            c: 1.0,
            cutoff: None,
        }
    }
}

impl WeightSpec {
    pub fn distance() -> Self {
        Self {
            mode: WeightMode::Distance,
            ..Self::default()
        }
    }

    pub fn reward() -> Self {
        Self {
            mode: WeightMode::Reward,
            ..Self::default()
        }
    }
}

/// Reward of each transition evaluated at its successor state.
pub fn cartpole_rewards(set: &TransitionSet, params: &CartpoleParams) -> Result<Vec<f64>> {
    set.transitions
        .iter()
        .map(|t| Ok(reward(&CartpoleState::from_slice(&t.s_next)?, t.a[0], params)))
        .collect()
}

/// Weights aligned with `set`. `rewards` is required in reward mode.
pub fn weights_from(spec: &WeightSpec, set: &TransitionSet, rewards: Option<&[f64]>) -> Result<Vec<f64>> {
    if !(spec.c >= 0.0) || !spec.c.is_finite() {
        return Err(Error::param("weight scale c must be finite and non-negative"));
    }
    match spec.mode {
        WeightMode::None => Ok(vec![1.0; set.len()]),
        WeightMode::Distance => set
            .transitions
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let d = t
                    .dstar
                    .ok_or_else(|| Error::DegenerateSample(format!("transition {i} has no stored distance")))?;
                Ok(match spec.cutoff {
                    Some(cut) if d > cut => 0.0,
                    _ => spec.c * (-d).exp(),
                })
            })
            .collect(),
        WeightMode::Reward => {
            let r = rewards.ok_or_else(|| Error::DegenerateSample("reward weighting needs rewards".into()))?;
            if r.len() != set.len() {
                return Err(Error::DimensionMismatch {
                    expected: set.len(),
                    got: r.len(),
                });
            }
            let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(hi > lo) {
                return Ok(vec![spec.c; r.len()]);
            }
            Ok(r.iter().map(|v| spec.c * (v - lo) / (hi - lo)).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Transition;

    fn with_distances(d: &[f64]) -> TransitionSet {
        let ts = d
            .iter()
            .map(|&d| {
                let mut t = Transition::new(vec![0.0; 4], vec![0.0], vec![0.0; 4]);
                t.dstar = Some(d);
                t
            })
            .collect();
        TransitionSet::from_transitions(ts, 4, 1, None).unwrap()
    }

    #[test]
    fn distance_weights_match_exponential() {
        let set = with_distances(&[0.0, std::f64::consts::LN_2, 20.0]);
        let w = weights_from(&WeightSpec::distance(), &set, None).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.5).abs() < 1e-15);
        assert!((w[2] - 2.061_153_622_438_558e-9).abs() < 1e-20);
    }

    #[test]
    fn cutoff_zeroes_far_samples() {
        let set = with_distances(&[0.5, 1.5]);
        let spec = WeightSpec {
            cutoff: Some(1.0),
            ..WeightSpec::distance()
        };
        let w = weights_from(&spec, &set, None).unwrap();
        assert!(w[0] > 0.0);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn distance_mode_requires_dstar() {
        let set = TransitionSet::from_transitions(vec![Transition::new(vec![0.0; 4], vec![0.0], vec![0.0; 4])], 4, 1, None).unwrap();
        assert!(weights_from(&WeightSpec::distance(), &set, None).is_err());
        assert!(weights_from(&WeightSpec::reward(), &set, None).is_err());
        assert_eq!(weights_from(&WeightSpec::default(), &set, None).unwrap(), vec![1.0]);
    }

    #[test]
    fn reward_weights_are_min_max_scaled() {
        let set = with_distances(&[0.0; 3]);
        let spec = WeightSpec {
            c: 2.0,
            ..WeightSpec::reward()
        };
        let w = weights_from(&spec, &set, Some(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(w, vec![0.0, 2.0, 1.0]);
    }

    proptest::proptest! {
        #[test]
        fn weights_lie_in_zero_to_c(d in proptest::collection::vec(0.0f64..50.0, 1..20), c in 0.0f64..5.0) {
            let set = with_distances(&d);
            let spec = WeightSpec { c, ..WeightSpec::distance() };
            for w in weights_from(&spec, &set, None).unwrap() {
                proptest::prop_assert!((0.0..=c).contains(&w));
            }
        }
    }
}
