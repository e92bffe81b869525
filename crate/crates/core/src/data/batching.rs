use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TransitionSet;
use crate::error::{Error, Result};
use crate::seeding;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    /// Shuffled transitions.
    #[default]
    Random,
    /// Contiguous pieces of a single episode.
    Trajectory,
}

impl std::str::FromStr for BatchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BatchMode::Random),
            "trajectory" => Ok(BatchMode::Trajectory),
            other => Err(Error::param(format!("unknown batching {other:?}"))),
        }
    }
}

/// Index lists into a [`TransitionSet`].
pub type Batches = Vec<Vec<usize>>;

pub fn batches(set: &TransitionSet, batch_size: usize, mode: BatchMode, seed: u64) -> Result<Batches> {
    if batch_size == 0 {
        return Err(Error::param("batch_size must be at least 1"));
    }
    match mode {
        BatchMode::Random => {
            let mut idx: Vec<usize> = (0..set.len()).collect();
            idx.shuffle(&mut seeding::rng(seed));
            Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
        }
        BatchMode::Trajectory => {
            if !set.has_episodes() {
                return Err(Error::param("trajectory batching needs episode ids"));
            }
            Ok(set
                .episode_ranges()
                .into_iter()
                .flat_map(|r| {
                    let idx: Vec<usize> = r.collect();
                    idx.chunks(batch_size).map(<[usize]>::to_vec).collect::<Vec<_>>()
                })
                .collect())
        }
    }
}

/// Seeded train/test partition, by transition or by whole episode.
pub fn split(
    set: &TransitionSet,
    train_fraction: f64,
    mode: BatchMode,
    seed: u64,
) -> Result<(TransitionSet, TransitionSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param("train_fraction must be in (0, 1)"));
    }
    let mut rng = seeding::rng(seed);
    let units: Vec<Vec<usize>> = match mode {
        BatchMode::Random => (0..set.len()).map(|i| vec![i]).collect(),
        BatchMode::Trajectory => {
            if !set.has_episodes() {
                return Err(Error::param("episode split needs episode ids"));
            }
            set.episode_ranges().into_iter().map(|r| r.collect()).collect()
        }
    };
    let n = units.len();
    if n < 2 {
        return Err(Error::param(format!("{n} units cannot be split into two parts")));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut train_units = order[..n_train].to_vec();
    let mut test_units = order[n_train..].to_vec();
    train_units.sort_unstable();
    test_units.sort_unstable();
    let gather = |us: &[usize]| -> Vec<usize> { us.iter().flat_map(|&u| units[u].clone()).collect() };
    Ok((set.subset(&gather(&train_units)), set.subset(&gather(&test_units))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect_babble, Transition};
    use crate::env::CartpoleParams;

    fn flat(n: usize) -> TransitionSet {
        let t = (0..n)
            .map(|i| Transition::new(vec![i as f64], vec![0.0], vec![i as f64 + 1.0]))
            .collect();
        TransitionSet::from_transitions(t, 1, 1, None).unwrap()
    }

    #[test]
    fn random_batch_sizes() {
        let b = batches(&flat(10), 3, BatchMode::Random, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
    }

    #[test]
    fn trajectory_batches_chunk_each_episode() {
        let set = collect_babble(1, 200, 0, &CartpoleParams::default()).unwrap();
        let b = batches(&set, 64, BatchMode::Trajectory, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![64, 64, 64, 8]);
        for batch in &b {
            assert!(batch.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }

    #[test]
    fn trajectory_batches_never_mix_episodes() {
        let set = collect_babble(7, 10, 1, &CartpoleParams::default()).unwrap();
        for batch in batches(&set, 4, BatchMode::Trajectory, 0).unwrap() {
            let first = set.transitions[batch[0]].episode_id;
            assert!(batch.iter().all(|&i| set.transitions[i].episode_id == first));
        }
    }

    #[test]
    fn trajectory_mode_needs_episodes() {
        assert!(batches(&flat(4), 2, BatchMode::Trajectory, 0).is_err());
    }

    #[test]
    fn split_sizes() {
        let (tr, te) = split(&flat(100), 0.9, BatchMode::Random, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (90, 10));
        let (tr, te) = split(&flat(2), 0.5, BatchMode::Random, 1).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        assert!(split(&flat(1), 0.5, BatchMode::Random, 1).is_err());
    }

    #[test]
    fn split_preserves_multiset() {
        let set = flat(37);
        let (tr, te) = split(&set, 0.7, BatchMode::Random, 5).unwrap();
        let mut all: Vec<f64> = tr.transitions.iter().chain(&te.transitions).map(|t| t.s[0]).collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..37).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn episode_split_keeps_episodes_whole() {
        let set = collect_babble(10, 5, 2, &CartpoleParams::default()).unwrap();
        let (tr, te) = split(&set, 0.8, BatchMode::Trajectory, 3).unwrap();
        assert_eq!((tr.len(), te.len()), (40, 10));
        let train_ids: std::collections::HashSet<_> = tr.transitions.iter().map(|t| t.episode_id).collect();
        assert!(te.transitions.iter().all(|t| !train_ids.contains(&t.episode_id)));
    }
}
