//! Subcommand implementations. Each writes its outputs plus the resolved
//! config, seed list and manifest into one output directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mismatch::adversarial::{attack, write_convergence_csv};
use mismatch::data::{self, BatchMode, ExpertDistance, Provenance, TransitionSet};
use mismatch::diagnostics::{
    babble_study, blob_sha1, compare_plans, config_hash, epoch_reward_curve, fmt_f64, goal_generalization, initial_dataset,
    ll_reward_sweep, plot_csv, reweight_heatmap, run_pets_seeds, write_babble_csv, write_correlation_csv, write_csv,
    write_epoch_csv, write_goal_csv, write_heatmap_csv, write_histogram_csv, write_json, write_plans_csv, write_records_csv,
    write_run_metadata, write_sweep_csv, CheckpointRef, RecordStore,
};
use mismatch::env::{CartpoleState, EpisodeResult, STATE_DIM};
use mismatch::model::{cartpole_rewards, load_checkpoint, save_checkpoint, weights_from, DynamicsModel, TrainOptions, WeightMode, WeightSpec};
use serde::Serialize;

use crate::config::{ExperimentConfig, TaggedPath, OUT_ENV};
use crate::{Batching, Cli, Command, DataKind, Reweight, Weighting};

/// State shared by one invocation.
struct Run {
    cfg: ExperimentConfig,
    out: PathBuf,
    inputs: BTreeSet<PathBuf>,
    outputs: Vec<String>,
    seeds: Vec<u64>,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn output(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.path(name)
    }

    fn load_set(&mut self, path: &Path) -> Result<TransitionSet> {
        if !path.exists() {
            bail!("input file not found: {}", path.display());
        }
        let set = data::load(path).with_context(|| format!("cannot load dataset {}", path.display()))?;
        self.inputs.insert(path.to_path_buf());
        Ok(set)
    }

    fn load_tagged(&mut self, sets: &[TaggedPath]) -> Result<Vec<(String, TransitionSet)>> {
        sets.iter().map(|t| Ok((t.tag.clone(), self.load_set(&t.path)?))).collect()
    }

    fn load_model(&mut self, path: &Path) -> Result<DynamicsModel> {
        if !path.exists() {
            bail!("input file not found: {}", path.display());
        }
        let m = load_checkpoint(path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
        self.inputs.insert(path.to_path_buf());
        Ok(m)
    }

    fn checkpoints(&mut self, roots: &[PathBuf]) -> Result<Vec<CheckpointRef>> {
        let mut refs = Vec::new();
        for root in roots {
            if root.is_file() {
                let id = root.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                refs.push(CheckpointRef {
                    model_id: id,
                    path: root.clone(),
                });
            } else if root.is_dir() {
                let mut found = Vec::new();
                find_checkpoints(root, &mut found)?;
                found.sort();
                for path in found {
                    let rel = path.strip_prefix(root).unwrap_or(&path).with_extension("");
                    refs.push(CheckpointRef {
                        model_id: rel.to_string_lossy().replace('\\', "/"),
                        path,
                    });
                }
            } else {
                bail!("input file not found: {}", root.display());
            }
        }
        if refs.is_empty() {
            bail!("no checkpoints found");
        }
        for r in &refs {
            self.inputs.insert(r.path.clone());
        }
        Ok(refs)
    }

    /// Store key covering `config` and the content of every input read so far.
    fn store(&self, name: &str, config: &impl Serialize) -> Result<RecordStore> {
        let hashes = self
            .inputs
            .iter()
            .map(|p| Ok(blob_sha1(&std::fs::read(p).with_context(|| format!("cannot read {}", p.display()))?)))
            .collect::<Result<Vec<_>>>()?;
        let key = config_hash(&(config, hashes))?;
        Ok(RecordStore::open(self.path(name), key)?)
    }

    fn finish(self, experiment: &str) -> Result<()> {
        let inputs: Vec<PathBuf> = self.inputs.into_iter().collect();
        write_run_metadata(&self.out, experiment, &self.cfg, &self.seeds, &inputs, &self.outputs)?;
        log::info!("outputs written to {}", self.out.display());
        Ok(())
    }
}

fn find_checkpoints(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find_checkpoints(&path, found)?;
        } else if path.extension().is_some_and(|e| e == "ckpt") {
            found.push(path);
        }
    }
    Ok(())
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(o) = &cli.out {
        return o.clone();
    }
    if let Some(o) = &cfg.out_dir {
        return o.clone();
    }
    let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(cli.command.name())
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Command::Plot { csv, output } = &cli.command {
        return plot(csv, output.as_deref());
    }
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &cli.set)?;
    let out = out_dir(cli, &cfg);
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut run = Run {
        seeds: vec![cfg.seed],
        cfg,
        out,
        inputs: BTreeSet::new(),
        outputs: Vec::new(),
    };
    mismatch::parallel::with_workers(cli.workers, || dispatch(&cli.command, &mut run))?;
    run.finish(cli.command.name())
}

fn dispatch(command: &Command, run: &mut Run) -> Result<()> {
    match command {
        Command::GenData { kind, slices, n, output } => gen_data(run, *kind, *slices, *n, output.as_deref()),
        Command::Train { data, weighting } => train(run, data.as_deref(), *weighting),
        Command::RunPets => run_pets(run),
        Command::SweepLlr { batching } => sweep(run, *batching),
        Command::EpochCurve => epoch_curve(run),
        Command::Attack => attack_cmd(run),
        Command::Heatmap { reweight } => heatmap(run, *reweight),
        Command::BabbleStudy => babble(run),
        Command::GoalGen => goals(run),
        Command::ComparePlans => plans(run),
        Command::Plot { .. } => unreachable!("handled before config resolution"),
    }
}

fn gen_data(run: &mut Run, kind: DataKind, slices: Option<usize>, n: Option<usize>, output: Option<&Path>) -> Result<()> {
    let cfg = run.cfg.clone();
    let set = match kind {
        DataKind::Grid => data::generate_grid(&cfg.data.bounds, slices.unwrap_or(cfg.data.grid_slices), cfg.data.grid_cap, &cfg.env)?,
        DataKind::Sampled => data::generate_sampled(&cfg.data.bounds, n.unwrap_or(cfg.data.sampled_n), cfg.seed, &cfg.env)?,
        DataKind::OnPolicy => on_policy(run)?,
        DataKind::Expert => data::collect_expert(&cfg.data.expert, &cfg.expert_planner(), cfg.seed, &cfg.env)?,
        DataKind::Filtered => {
            let Some(expert) = &cfg.data.filter.expert else {
                bail!("invalid config at `data.filter.expert`: required for filtered data");
            };
            let spec = data::DistanceFilterSpec {
                expert: run.load_set(expert)?,
                epsilon: cfg.data.filter.epsilon,
                keep: cfg.data.filter.keep,
                pool_size: cfg.data.filter.pool_size,
                seed: cfg.seed,
                metric: cfg.data.filter.metric,
            };
            data::filter_by_distance(&spec, &cfg.data.bounds, &cfg.env)?
        }
        DataKind::Babble => data::collect_babble(cfg.data.babble.rollouts, cfg.data.babble.horizon, cfg.seed, &cfg.env)?,
    };
    let name = format!("{}.csv", kind_name(kind));
    let path = match output {
        Some(p) => {
            run.outputs.push(p.display().to_string());
            p.to_path_buf()
        }
        None => run.output(&name),
    };
    data::save(&set, &path).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("{} transitions written to {}", set.len(), path.display());
    Ok(())
}

fn kind_name(kind: DataKind) -> &'static str {
    match kind {
        DataKind::Grid => "grid",
        DataKind::Sampled => "sampled",
        DataKind::OnPolicy => "on-policy",
        DataKind::Expert => "expert",
        DataKind::Filtered => "filtered",
        DataKind::Babble => "babble",
    }
}

/// Transitions collected by the planner in a PETS run, without the initial
/// random episodes.
fn on_policy(run: &mut Run) -> Result<TransitionSet> {
    let pets = run.cfg.pets();
    let initial = initial_dataset(&pets)?.next_episode_id();
    let runs = run_pets_seeds(&pets, &[pets.seed], &[], &run.path("pets"))?;
    let r = &runs[0];
    let mut transitions: Vec<_> = r
        .train
        .transitions
        .iter()
        .chain(&r.holdout.transitions)
        .filter(|t| t.episode_id.is_some_and(|e| e >= initial))
        .cloned()
        .collect();
    transitions.sort_by_key(|t| (t.episode_id, t.step_index));
    Ok(TransitionSet::from_transitions(transitions, STATE_DIM, 1, Some(Provenance::OnPolicy))?)
}

fn weight_mode(w: Weighting) -> WeightMode {
    match w {
        Weighting::None => WeightMode::None,
        Weighting::Distance => WeightMode::Distance,
        Weighting::Reward => WeightMode::Reward,
    }
}

fn train(run: &mut Run, data_path: Option<&Path>, weighting: Option<Weighting>) -> Result<()> {
    if let Some(w) = weighting {
        run.cfg.train.weighting.mode = weight_mode(w);
    }
    if let Some(p) = data_path {
        run.cfg.train.dataset = Some(p.to_path_buf());
    }
    let cfg = run.cfg.clone();
    let Some(path) = &cfg.train.dataset else {
        bail!("invalid config at `train.dataset`: no training data given");
    };
    let set = run.load_set(path)?;
    let val = match &cfg.train.validation {
        Some(p) => Some(run.load_set(p)?),
        None => None,
    };
    let rewards = match cfg.train.weighting.mode {
        WeightMode::Reward => Some(cartpole_rewards(&set, &cfg.env)?),
        _ => None,
    };
    let weights = match cfg.train.weighting.mode {
        WeightMode::None => None,
        _ => Some(weights_from(&cfg.train.weighting, &set, rewards.as_deref())?),
    };
    let model_cfg = mismatch::model::ModelConfig {
        seed: cfg.seed,
        ..cfg.model.clone()
    };
    let mut model = DynamicsModel::new(model_cfg, set.state_dim, set.action_dim)?;
    let opts = TrainOptions {
        weights: weights.as_deref(),
        validation: val.as_ref(),
        val_batching: cfg.train.val_batching,
        ..TrainOptions::default()
    };
    model.train(&set, &opts, None)?;
    let ckpt = run.output("model.ckpt");
    save_checkpoint(&model, &ckpt)?;
    let header = ["epoch", "train_loss", "val_loss", "val_batch_loss"].map(String::from);
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let rows = model
        .history()
        .epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), fmt_f64(e.train_loss), opt(e.val_loss), opt(e.val_batch_loss)]);
    write_csv(&run.output("history.csv"), &header, rows)?;
    Ok(())
}

fn run_pets(run: &mut Run) -> Result<()> {
    let cfg = run.cfg.clone();
    let eval_sets = run.load_tagged(&cfg.pets.eval_sets)?;
    run.seeds = cfg.pets.seeds.clone();
    let runs = run_pets_seeds(&cfg.pets(), &cfg.pets.seeds, &eval_sets, &run.out)?;
    for s in &cfg.pets.seeds {
        run.outputs.push(format!("seed-{s}/records.csv"));
    }
    let records: Vec<_> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    write_records_csv(&run.output("records.csv"), &records)?;
    Ok(())
}

fn batch_mode(b: Batching) -> BatchMode {
    match b {
        Batching::Random => BatchMode::Random,
        Batching::Trajectory => BatchMode::Trajectory,
    }
}

fn batch_name(b: BatchMode) -> &'static str {
    match b {
        BatchMode::Random => "random",
        BatchMode::Trajectory => "trajectory",
    }
}

fn sweep(run: &mut Run, batching: Option<Batching>) -> Result<()> {
    if let Some(b) = batching {
        run.cfg.sweep.batching = batch_mode(b);
    }
    let cfg = run.cfg.clone();
    let ckpts = run.checkpoints(&cfg.sweep.checkpoints)?;
    let datasets = run.load_tagged(&cfg.sweep.datasets)?;
    if datasets.is_empty() {
        bail!("invalid config at `sweep.datasets`: at least one dataset is required");
    }
    let sweep_cfg = cfg.sweep(cfg.sweep.batching);
    // Batching is part of each unit id, so both modes share one store.
    let key_cfg = cfg.sweep(BatchMode::Random);
    let mut store = run.store("sweep.jsonl", &(key_cfg, &ckpts))?;
    let res = ll_reward_sweep(&ckpts, &datasets, &sweep_cfg, &mut store)?;
    let name = batch_name(cfg.sweep.batching);
    write_sweep_csv(&run.output(&format!("sweep-{name}.csv")), &res.records)?;
    write_correlation_csv(&run.output(&format!("correlation-{name}.csv")), &res.reports)?;
    for r in &res.reports {
        log::info!("{} ({name}): rho = {:.3} over {} models", r.dataset, r.pearson_rho, r.n);
    }
    Ok(())
}

fn epoch_curve(run: &mut Run) -> Result<()> {
    let cfg = run.cfg.clone();
    let Some(path) = &cfg.epoch_curve.dataset else {
        bail!("invalid config at `epoch_curve.dataset`: no training data given");
    };
    let set = run.load_set(path)?;
    let vals = run.load_tagged(&cfg.epoch_curve.val_sets)?;
    let ec = cfg.epoch_curve();
    let mut store = run.store("epoch.jsonl", &ec)?;
    let rows = epoch_reward_curve(&ec, &set, &vals, &mut store)?;
    write_epoch_csv(&run.output("epoch.csv"), &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct AttackSummary {
    baseline_reward: f64,
    baseline_ll: f64,
    final_reward: f64,
    final_ll: f64,
    reward_ratio: f64,
    generations: usize,
}

fn attack_cmd(run: &mut Run) -> Result<()> {
    let cfg = run.cfg.clone();
    let (Some(ckpt), Some(val)) = (&cfg.attack.checkpoint, &cfg.attack.validation) else {
        bail!("invalid config at `attack`: `checkpoint` and `validation` are required");
    };
    let model = run.load_model(ckpt)?;
    let val = run.load_set(val)?;
    let ac = cfg.attack();
    run.seeds = vec![ac.seed];
    let res = attack(&model, &val, &cfg.env, &cfg.planner, &ac)?;
    save_checkpoint(&res.model, &run.output("attacked.ckpt"))?;
    write_convergence_csv(&run.output("convergence.csv"), &res.history)?;
    let summary = AttackSummary {
        baseline_reward: res.baseline.reward,
        baseline_ll: res.baseline.ll,
        final_reward: res.final_eval.reward,
        final_ll: res.final_eval.ll,
        reward_ratio: res.final_eval.reward / res.baseline.reward,
        generations: res.history.len(),
    };
    write_json(&run.output("attack.json"), &summary)?;
    log::info!(
        "reward {:.2} -> {:.2}, LL {:.4} -> {:.4}",
        summary.baseline_reward,
        summary.final_reward,
        summary.baseline_ll,
        summary.final_ll
    );
    Ok(())
}

fn heatmap(run: &mut Run, reweight: Option<Reweight>) -> Result<()> {
    let cfg = run.cfg.clone();
    let mut weighting = cfg.heatmap.weighting;
    if let Some(r) = reweight {
        weighting = match r {
            Reweight::On => WeightSpec {
                mode: WeightMode::Distance,
                ..weighting
            },
            Reweight::Off => WeightSpec {
                mode: WeightMode::None,
                ..weighting
            },
            Reweight::Reward => WeightSpec {
                mode: WeightMode::Reward,
                ..weighting
            },
        };
        run.cfg.heatmap.weighting = weighting;
    }
    let expert = match &cfg.heatmap.expert {
        Some(p) => run.load_set(p)?,
        None => {
            let set = data::collect_expert(&cfg.data.expert, &cfg.expert_planner(), cfg.seed, &cfg.env)?;
            data::save(&set, run.output("expert.csv"))?;
            set
        }
    };
    ExpertDistance::new(&expert, cfg.heatmap.metric)?;
    let hc = cfg.heatmap(weighting);
    // Cells are keyed by weight mode, so all modes share one store.
    let key = cfg.heatmap(WeightSpec { mode: WeightMode::None, ..weighting });
    let mut store = run.store("heatmap.jsonl", &(key, blob_sha1(&expert_bytes(&expert)?)))?;
    let cells = reweight_heatmap(&hc, &expert, &mut store)?;
    let name = match weighting.mode {
        WeightMode::None => "off",
        WeightMode::Distance => "on",
        WeightMode::Reward => "reward",
    };
    write_heatmap_csv(&run.output(&format!("heatmap-{name}.csv")), &cells)?;
    Ok(())
}

fn expert_bytes(set: &TransitionSet) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    data::write_to(set, &mut buf)?;
    Ok(buf)
}

fn babble(run: &mut Run) -> Result<()> {
    let bc = run.cfg.babble();
    run.seeds = bc.seeds.clone();
    let curves = babble_study(&bc, &run.out)?;
    write_babble_csv(&run.output("babble.csv"), &curves)?;
    Ok(())
}

fn goals(run: &mut Run) -> Result<()> {
    let cfg = run.cfg.clone();
    let ckpts = run.checkpoints(&cfg.goals.checkpoints)?;
    let gc = cfg.goals();
    let mut store = run.store("goals.jsonl", &(&gc, &ckpts))?;
    let res = goal_generalization(&ckpts, &gc, &mut store)?;
    write_goal_csv(&run.output("goals.csv"), &res.rows)?;
    write_histogram_csv(&run.output("histograms.csv"), &res.histograms)?;
    Ok(())
}

/// Episode `id` of `set`, rebuilt as states and actions.
pub fn episode_from_set(set: &TransitionSet, id: u64, params: &mismatch::env::CartpoleParams) -> Result<EpisodeResult> {
    let steps: Vec<_> = set.transitions.iter().filter(|t| t.episode_id == Some(id)).collect();
    let Some(last) = steps.last() else {
        bail!("dataset has no episode {id}");
    };
    let mut states = steps
        .iter()
        .map(|t| CartpoleState::from_slice(&t.s))
        .collect::<mismatch::Result<Vec<_>>>()?;
    states.push(CartpoleState::from_slice(&last.s_next)?);
    let actions: Vec<f64> = steps.iter().map(|t| t.a[0]).collect();
    let rewards: Vec<f64> = states[1..]
        .iter()
        .zip(&actions)
        .map(|(s, &a)| mismatch::env::reward(s, a, params))
        .collect();
    Ok(EpisodeResult {
        total_reward: rewards.iter().sum(),
        states,
        actions,
        rewards,
    })
}

fn plans(run: &mut Run) -> Result<()> {
    let cfg = run.cfg.clone();
    let (Some(a), Some(b), Some(e)) = (&cfg.compare.model_a, &cfg.compare.model_b, &cfg.compare.expert) else {
        bail!("invalid config at `compare`: `model_a`, `model_b` and `expert` are required");
    };
    let model_a = run.load_model(a)?;
    let model_b = run.load_model(b)?;
    let expert = run.load_set(e)?;
    let episode = episode_from_set(&expert, cfg.compare.episode, &cfg.env)?;
    let rows = compare_plans(&model_a, &model_b, &episode, &cfg.planner, &cfg.env)?;
    write_plans_csv(&run.output("plans.csv"), &rows)?;
    Ok(())
}

fn plot(csv: &Path, output: Option<&Path>) -> Result<()> {
    if !csv.exists() {
        bail!("input file not found: {}", csv.display());
    }
    let svg = plot_csv(csv)?;
    let path = output.map(Path::to_path_buf).unwrap_or_else(|| csv.with_extension("svg"));
    std::fs::write(&path, svg).with_context(|| format!("cannot write {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}
