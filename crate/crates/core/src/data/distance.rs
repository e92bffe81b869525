//! Distance of (s, a) points to an expert trajectory, and distance-bounded
//! dataset construction.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{complete, sample_points, Bounds, Normalizer, Provenance, TransitionSet};
use crate::env::{self, CartpoleParams};
use crate::error::{Error, Result};
use crate::parallel;
use crate::seeding;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMetric {
    /// Nearest expert element.
    #[default]
    PointToPoint,
    /// Nearest segment between consecutive elements of one expert episode.
    PointToSegment,
}

/// Expert trajectory preprocessed for repeated distance queries.
#[derive(Debug, Clone)]
pub struct ExpertDistance {
    normalizer: Normalizer,
    points: Vec<Vec<f64>>,
    /// Pairs of consecutive indices in the same episode.
    segments: Vec<(usize, usize)>,
    metric: DistanceMetric,
}

impl ExpertDistance {
    /// Build from an expert set, z-scoring with the expert's own statistics.
    pub fn new(expert: &TransitionSet, metric: DistanceMetric) -> Result<Self> {
        if expert.is_empty() {
            return Err(Error::param("expert set is empty"));
        }
        let inputs = expert.inputs();
        let normalizer = Normalizer::fit(inputs.iter().map(|v| v.as_slice()))?;
        Self::with_normalizer(expert, normalizer, metric)
    }

    pub fn with_normalizer(
        expert: &TransitionSet,
        normalizer: Normalizer,
        metric: DistanceMetric,
    ) -> Result<Self> {
        if expert.is_empty() {
            return Err(Error::param("expert set is empty"));
        }
        if normalizer.dim() != expert.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: expert.input_dim(),
                got: normalizer.dim(),
            });
        }
        let points = expert
            .transitions
            .iter()
            .map(|t| normalizer.apply(&t.input()))
            .collect();
        let segments = expert
            .transitions
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].episode_id.is_some() && w[0].episode_id == w[1].episode_id)
            .map(|(i, _)| (i, i + 1))
            .collect();
        Ok(Self {
            normalizer,
            points,
            segments,
            metric,
        })
    }

    pub fn dim(&self) -> usize {
        self.normalizer.dim()
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Minimum distance from a raw (s, a) point to the expert.
    pub fn distance(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: point.len(),
            });
        }
        let z = self.normalizer.apply(point);
        let mut best = self
            .points
            .iter()
            .map(|p| sq_dist(&z, p))
            .fold(f64::INFINITY, f64::min);
        if self.metric == DistanceMetric::PointToSegment {
            for &(i, j) in &self.segments {
                best = best.min(segment_sq_dist(&z, &self.points[i], &self.points[j]));
            }
        }
        Ok(best.sqrt())
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn segment_sq_dist(z: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut dot = 0.0;
    for k in 0..z.len() {
        let ab = b[k] - a[k];
        ab2 += ab * ab;
        dot += (z[k] - a[k]) * ab;
    }
    if ab2 == 0.0 {
        return sq_dist(z, a);
    }
    let t = (dot / ab2).clamp(0.0, 1.0);
    z.iter()
        .zip(a.iter().zip(b))
        .map(|(zk, (ak, bk))| {
            let d = zk - (ak + t * (bk - ak));
            d * d
        })
        .sum()
}

/// Point-to-point distance using a caller-supplied normalizer.
pub fn min_distance_to_expert(
    point: &[f64],
    expert: &TransitionSet,
    normalizer: &Normalizer,
) -> Result<f64> {
    ExpertDistance::with_normalizer(expert, normalizer.clone(), DistanceMetric::PointToPoint)?
        .distance(point)
}

#[derive(Debug, Clone)]
pub struct DistanceFilterSpec {
    pub expert: TransitionSet,
    pub epsilon: f64,
    /// Number of points to keep.
    pub keep: usize,
    pub pool_size: usize,
    pub seed: u64,
    pub metric: DistanceMetric,
}

impl DistanceFilterSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon must be positive"));
        }
        if self.keep == 0 || self.keep > self.pool_size {
            return Err(Error::param("need 1 <= S <= pool_size"));
        }
        Ok(())
    }
}

/// Uniform pool of (s, a) points annotated with their expert distance.
/// Reusing one pool across bounds keeps survivor sets nested in epsilon.
#[derive(Debug, Clone)]
pub struct DistancePool {
    pub points: Vec<Vec<f64>>,
    pub dstar: Vec<f64>,
}

impl DistancePool {
    pub fn sample(
        expert: &ExpertDistance,
        bounds: &Bounds,
        pool_size: usize,
        seed: u64,
    ) -> Result<Self> {
        super::check_cartpole_bounds(bounds)?;
        let points = sample_points(bounds, pool_size, seed);
        let dstar = parallel::map_slice(&points, |p| expert.distance(p))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, dstar })
    }

    /// Indices with d* <= epsilon, in pool order.
    pub fn survivors(&self, epsilon: f64) -> Vec<usize> {
        (0..self.dstar.len())
            .filter(|&i| self.dstar[i] <= epsilon)
            .collect()
    }

    pub fn min_distance(&self) -> f64 {
        self.dstar.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Uniformly subsample `keep` survivors and complete them into transitions.
    pub fn select(
        &self,
        epsilon: f64,
        keep: usize,
        seed: u64,
        params: &CartpoleParams,
    ) -> Result<TransitionSet> {
        let survivors = self.survivors(epsilon);
        if survivors.len() < keep {
            return Err(Error::TooFewSurvivors {
                survivors: survivors.len(),
                requested: keep,
            });
        }
        let mut rng = seeding::rng(seed);
        let mut picked: Vec<usize> = index::sample(&mut rng, survivors.len(), keep)
            .into_iter()
            .map(|k| survivors[k])
            .collect();
        picked.sort_unstable();
        let transitions = picked
            .iter()
            .map(|&i| {
                let mut t = complete(&self.points[i], params)?;
                t.dstar = Some(self.dstar[i]);
                Ok(t)
            })
            .collect::<Result<Vec<_>>>()?;
        TransitionSet::from_transitions(
            transitions,
            env::STATE_DIM,
            env::ACTION_DIM,
            Some(Provenance::Filtered),
        )
    }
}

pub fn filter_by_distance(
    spec: &DistanceFilterSpec,
    bounds: &Bounds,
    params: &CartpoleParams,
) -> Result<TransitionSet> {
    spec.validate()?;
    let expert = ExpertDistance::new(&spec.expert, spec.metric)?;
    let pool = DistancePool::sample(&expert, bounds, spec.pool_size, seeding::derive(spec.seed, 0))?;
    pool.select(spec.epsilon, spec.keep, seeding::derive(spec.seed, 1), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_sampled, Transition};
    use rand::Rng;

    fn fake_expert(n: usize, seed: u64) -> TransitionSet {
        let mut rng = seeding::rng(seed);
        let transitions = (0..n)
            .map(|i| {
                let s: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut t = Transition::new(s.clone(), vec![rng.random_range(-1.0..1.0)], s);
                t.episode_id = Some(0);
                t.step_index = Some(i as u64);
                t
            })
            .collect();
        TransitionSet::from_transitions(transitions, 4, 1, Some(Provenance::Expert)).unwrap()
    }

    #[test]
    fn expert_point_has_zero_distance() {
        let expert = fake_expert(20, 1);
        let d = ExpertDistance::new(&expert, DistanceMetric::PointToPoint).unwrap();
        assert_eq!(d.distance(&expert.transitions[7].input()).unwrap(), 0.0);
    }

    #[test]
    fn single_element_is_pairwise_distance() {
        let expert = fake_expert(1, 2);
        let norm = Normalizer::identity(5);
        let p = [0.1, 0.2, 0.3, 0.4, 0.5];
        let e = expert.transitions[0].input();
        let want = p.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let got = min_distance_to_expert(&p, &expert, &norm).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_over_two_hundred_elements() {
        let expert = fake_expert(200, 3);
        let d = ExpertDistance::new(&expert, DistanceMetric::PointToPoint).unwrap();
        let norm = d.normalizer().clone();
        let mut rng = seeding::rng(4);
        for _ in 0..50 {
            let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let zp: Vec<f64> = p.iter().enumerate().map(|(k, v)| (v - norm.mean[k]) / norm.std[k]).collect();
            let brute = expert
                .transitions
                .iter()
                .map(|t| {
                    let e = t.input();
                    let ze: Vec<f64> = e.iter().enumerate().map(|(k, v)| (v - norm.mean[k]) / norm.std[k]).collect();
                    zp.iter().zip(&ze).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((d.distance(&p).unwrap() - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn segment_metric_never_exceeds_point_metric() {
        let expert = fake_expert(30, 5);
        let pp = ExpertDistance::new(&expert, DistanceMetric::PointToPoint).unwrap();
        let ps = ExpertDistance::new(&expert, DistanceMetric::PointToSegment).unwrap();
        let mut rng = seeding::rng(6);
        for _ in 0..100 {
            let p: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(ps.distance(&p).unwrap() <= pp.distance(&p).unwrap() + 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let expert = fake_expert(3, 7);
        let d = ExpertDistance::new(&expert, DistanceMetric::PointToPoint).unwrap();
        assert!(matches!(d.distance(&[0.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn infinite_epsilon_keeps_whole_pool() {
        let p = CartpoleParams::default();
        let expert = fake_expert(10, 8);
        let spec = DistanceFilterSpec {
            expert,
            epsilon: f64::INFINITY,
            keep: 500,
            pool_size: 500,
            seed: 9,
            metric: DistanceMetric::PointToPoint,
        };
        let set = filter_by_distance(&spec, &Bounds::cartpole(), &p).unwrap();
        assert_eq!(set.len(), 500);
        let pool = generate_sampled(&Bounds::cartpole(), 500, seeding::derive(9, 0), &p).unwrap();
        let mut a: Vec<Vec<f64>> = set.inputs();
        let mut b: Vec<Vec<f64>> = pool.inputs();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn survivors_nested_and_bounded() {
        let p = CartpoleParams::default();
        let expert = fake_expert(50, 10);
        let d = ExpertDistance::new(&expert, DistanceMetric::PointToPoint).unwrap();
        let pool = DistancePool::sample(&d, &Bounds::cartpole(), 5000, 11).unwrap();
        let small = pool.survivors(3.0);
        let large = pool.survivors(5.0);
        assert!(small.iter().all(|i| large.binary_search(i).is_ok()));
        let set = pool.select(5.0, large.len().min(100), 12, &p).unwrap();
        assert!(set.transitions.iter().all(|t| t.dstar.unwrap() <= 5.0));
    }

    #[test]
    fn too_few_survivors_reports_count() {
        let p = CartpoleParams::default();
        let expert = fake_expert(5, 13);
        let d = ExpertDistance::new(&expert, DistanceMetric::PointToPoint).unwrap();
        let pool = DistancePool::sample(&d, &Bounds::cartpole(), 100, 14).unwrap();
        let eps = pool.min_distance() * 0.5;
        match pool.select(eps, 1, 0, &p) {
            Err(Error::TooFewSurvivors { survivors, .. }) => assert_eq!(survivors, 0),
            other => panic!("{other:?}"),
        }
    }
}
