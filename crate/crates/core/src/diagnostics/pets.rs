//! The PETS loop: learn a model, control with MPC, aggregate data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::store::{config_hash, fmt_f64, write_csv, RecordStore};
use crate::data::{self, collect_babble, episode_seed, episode_transitions, Provenance, TransitionSet};
use crate::env::{self, CartpoleParams, CartpoleState, EpisodeResult, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, save_checkpoint, DynamicsModel, ModelConfig, TrainMode, TrainOptions};
use crate::planner::{CartpoleReward, MpcPolicy, PlannerConfig};
use crate::seeding;

/// Data the first model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialData {
    /// Full-length episodes under uniformly random actions.
    RandomEpisodes { episodes: usize },
    /// Short random rollouts from the noise-free hanging state.
    Babble { rollouts: usize, horizon: usize },
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::RandomEpisodes { episodes: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PetsConfig {
    pub env: CartpoleParams,
    pub model: ModelConfig,
    pub planner: PlannerConfig,
    pub n_trials: usize,
    pub episode_horizon: usize,
    pub initial_data: InitialData,
    /// `full` trains a freshly initialized model on all data every trial;
    /// `incremental` keeps training the previous model.
    pub train_mode: TrainMode,
    /// Fraction of every episode held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for PetsConfig {
    fn default() -> Self {
        Self {
            env: CartpoleParams::default(),
            model: ModelConfig::default(),
            planner: PlannerConfig::default(),
            n_trials: 20,
            episode_horizon: 200,
            initial_data: InitialData::default(),
            train_mode: TrainMode::Full,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl PetsConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.model.validate()?;
        self.planner.validate()?;
        if self.n_trials == 0 || self.episode_horizon == 0 {
            return Err(Error::param("n_trials and episode_horizon must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::param("val_fraction must lie in [0, 1)"));
        }
        match self.initial_data {
            InitialData::RandomEpisodes { episodes: 0 } | InitialData::Babble { rollouts: 0, .. } => {
                Err(Error::param("initial data must contain at least one rollout"))
            }
            InitialData::Babble { horizon: 0, .. } => Err(Error::param("babble horizon must be positive")),
            _ => Ok(()),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model_id: String,
    pub run_seed: u64,
    pub trial_index: usize,
    /// Mean LL per transition, by dataset tag.
    pub ll_per_dataset: BTreeMap<String, f64>,
    pub mean_reward: f64,
    pub reward_per_episode: Vec<f64>,
}

impl ExperimentRecord {
    pub fn new(
        model_id: String,
        run_seed: u64,
        trial_index: usize,
        ll_per_dataset: BTreeMap<String, f64>,
        reward_per_episode: Vec<f64>,
    ) -> Self {
        let mean_reward = super::stats::mean(&reward_per_episode);
        Self {
            model_id,
            run_seed,
            trial_index,
            ll_per_dataset,
            mean_reward,
            reward_per_episode,
        }
    }
}

/// Tag of the in-run held-out split.
pub const HOLDOUT: &str = "holdout";

#[derive(Debug, Clone)]
pub struct PetsRun {
    pub records: Vec<ExperimentRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub train: TransitionSet,
    pub holdout: TransitionSet,
}

impl PetsRun {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mean_reward).collect()
    }

    /// Held-out NLL per trial.
    pub fn holdout_nll(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| r.ll_per_dataset.get(HOLDOUT).map_or(f64::NAN, |ll| -ll))
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct TrialEntry {
    record: ExperimentRecord,
    episode: EpisodeResult,
}

pub fn model_id(seed: u64, trial: usize) -> String {
    format!("s{seed}-t{trial:03}")
}

fn random_episode(seed: u64, horizon: usize, params: &CartpoleParams) -> Result<EpisodeResult> {
    let mut rng = seeding::rng(seeding::derive(seed, 0x7a4d));
    let mut policy = |_: &CartpoleState| Ok(rng.random_range(-1.0..=1.0));
    env::rollout(&mut policy, horizon, seed, params)
}

pub fn initial_dataset(cfg: &PetsConfig) -> Result<TransitionSet> {
    let seed = seeding::derive(cfg.seed, 0x1417);
    match cfg.initial_data {
        InitialData::RandomEpisodes { episodes } => {
            let eps = (0..episodes)
                .map(|k| random_episode(episode_seed(seed, k), cfg.episode_horizon, &cfg.env))
                .collect::<Result<Vec<_>>>()?;
            data::episodes_to_set(&eps, Provenance::OnPolicy)
        }
        InitialData::Babble { rollouts, horizon } => collect_babble(rollouts, horizon, seed, &cfg.env),
    }
}

/// Append episodes of `set` to train/holdout, assigning each transition to
/// the holdout with probability `fraction` from a per-episode stream.
fn append_split(set: &TransitionSet, fraction: f64, seed: u64, train: &mut TransitionSet, holdout: &mut TransitionSet) {
    let mut current = None;
    let mut rng = seeding::rng(0);
    for t in &set.transitions {
        if current != Some(t.episode_id) {
            current = Some(t.episode_id);
            rng = seeding::rng(seeding::derive2(seed, 0x401d, t.episode_id.unwrap_or(u64::MAX)));
        }
        if fraction > 0.0 && rng.random::<f64>() < fraction {
            holdout.transitions.push(t.clone());
        } else {
            train.transitions.push(t.clone());
        }
    }
}

fn mean_ll(model: &DynamicsModel, set: &TransitionSet) -> Result<f64> {
    let ll = model.sample_log_likelihood(set)?;
    Ok(super::stats::mean(&ll))
}

/// Run the loop, writing checkpoints and per-trial records to `dir`.
/// Completed trials found in `dir` (same config) are reused.
pub fn run_pets(cfg: &PetsConfig, eval_sets: &[(String, TransitionSet)], dir: &Path) -> Result<PetsRun> {
    cfg.validate()?;
    let tags: Vec<&str> = eval_sets.iter().map(|(t, _)| t.as_str()).collect();
    let key = config_hash(&(cfg, &tags))?;
    let mut store = RecordStore::open(dir.join("records.jsonl"), key)?;

    let initial = initial_dataset(cfg)?;
    let mut train = TransitionSet::new(STATE_DIM, ACTION_DIM, Some(Provenance::OnPolicy));
    let mut holdout = train.clone();
    append_split(&initial, cfg.val_fraction, cfg.seed, &mut train, &mut holdout);

    let mut records = Vec::with_capacity(cfg.n_trials);
    let mut checkpoints = Vec::with_capacity(cfg.n_trials);
    let mut model: Option<DynamicsModel> = None;
    for trial in 1..=cfg.n_trials {
        let ckpt = dir.join(format!("{}.ckpt", model_id(cfg.seed, trial)));
        let episode_id = train.next_episode_id().max(holdout.next_episode_id());
        let done = match store.get::<TrialEntry>(&format!("trial-{trial:03}"))? {
            Some(entry) if ckpt.exists() => Some(entry),
            _ => None,
        };
        let entry = match done {
            Some(entry) => {
                model = None;
                entry
            }
            None => {
                let (m, entry) = run_trial(cfg, trial, model.take(), &checkpoints, &train, &holdout, eval_sets)
                    .map_err(|e| Error::Trial {
                        trial,
                        source: Box::new(e),
                    })?;
                save_checkpoint(&m, &ckpt)?;
                store.put(&format!("trial-{trial:03}"), &entry)?;
                model = Some(m);
                entry
            }
        };
        log::info!(
            "seed {} trial {trial}: reward {:.2}",
            cfg.seed,
            entry.record.mean_reward
        );
        let episode = TransitionSet::from_transitions(
            episode_transitions(&entry.episode, episode_id),
            STATE_DIM,
            ACTION_DIM,
            Some(Provenance::OnPolicy),
        )?;
        append_split(&episode, cfg.val_fraction, cfg.seed, &mut train, &mut holdout);
        records.push(entry.record);
        checkpoints.push(ckpt);
    }
    write_records_csv(&dir.join("records.csv"), &records)?;
    Ok(PetsRun {
        records,
        checkpoints,
        train,
        holdout,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    cfg: &PetsConfig,
    trial: usize,
    previous: Option<DynamicsModel>,
    earlier: &[PathBuf],
    train: &TransitionSet,
    holdout: &TransitionSet,
    eval_sets: &[(String, TransitionSet)],
) -> Result<(DynamicsModel, TrialEntry)> {
    let mut model = match (cfg.train_mode, previous) {
        (TrainMode::Incremental, Some(m)) => m,
        (TrainMode::Incremental, None) if !earlier.is_empty() => load_checkpoint(earlier.last().expect("non-empty"))?,
        (TrainMode::Incremental, None) => DynamicsModel::new(
            ModelConfig {
                seed: seeding::derive(cfg.seed, 0x30de1),
                ..cfg.model.clone()
            },
            STATE_DIM,
            ACTION_DIM,
        )?,
        (TrainMode::Full, _) => DynamicsModel::new(
            ModelConfig {
                seed: seeding::derive2(cfg.seed, 0x30de1, trial as u64),
                ..cfg.model.clone()
            },
            STATE_DIM,
            ACTION_DIM,
        )?,
    };
    let opts = TrainOptions {
        mode: cfg.train_mode,
        validation: Some(holdout).filter(|h| !h.is_empty()),
        ..TrainOptions::default()
    };
    model.train(train, &opts, None)?;

    let mut ll = BTreeMap::new();
    if !holdout.is_empty() {
        ll.insert(HOLDOUT.to_string(), mean_ll(&model, holdout)?);
    }
    for (tag, set) in eval_sets {
        ll.insert(tag.clone(), mean_ll(&model, set)?);
    }
    let reward = CartpoleReward::new(cfg.env.clone());
    let planner = PlannerConfig {
        seed: seeding::derive2(cfg.seed, 0x9a2, trial as u64),
        ..cfg.planner.clone()
    };
    let mut policy = MpcPolicy::new(&model, &reward, planner);
    let episode = env::rollout(
        &mut policy,
        cfg.episode_horizon,
        episode_seed(seeding::derive(cfg.seed, 0xe915), trial),
        &cfg.env,
    )?;
    let record = ExperimentRecord::new(model_id(cfg.seed, trial), cfg.seed, trial, ll, vec![episode.total_reward]);
    Ok((model, TrialEntry { record, episode }))
}

pub fn write_records_csv(path: &Path, records: &[ExperimentRecord]) -> Result<()> {
    let mut tags: Vec<&String> = records.iter().flat_map(|r| r.ll_per_dataset.keys()).collect();
    tags.sort();
    tags.dedup();
    let mut header: Vec<String> = ["model_id", "run_seed", "trial", "mean_reward"].map(String::from).to_vec();
    header.extend(tags.iter().map(|t| format!("ll_{t}")));
    let rows = records.iter().map(|r| {
        let mut row = vec![
            r.model_id.clone(),
            r.run_seed.to_string(),
            r.trial_index.to_string(),
            fmt_f64(r.mean_reward),
        ];
        row.extend(tags.iter().map(|t| r.ll_per_dataset.get(*t).map_or(String::new(), |v| fmt_f64(*v))));
        row
    });
    write_csv(path, &header, rows)
}

/// Independent runs for each seed, in `dir/seed-<s>`, evaluated in parallel.
pub fn run_pets_seeds(
    cfg: &PetsConfig,
    seeds: &[u64],
    eval_sets: &[(String, TransitionSet)],
    dir: &Path,
) -> Result<Vec<PetsRun>> {
    crate::parallel::map_slice(seeds, |&s| run_pets(&cfg.with_seed(s), eval_sets, &dir.join(format!("seed-{s}"))))
        .into_iter()
        .collect()
}
