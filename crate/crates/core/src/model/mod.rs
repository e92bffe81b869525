//! Feed-forward dynamics models predicting the state difference, as single
//! networks or bootstrapped ensembles, with deterministic or Gaussian heads.

mod checkpoint;
mod loss;
mod network;
mod weights;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{batches, BatchMode, Normalizer, TransitionSet};
use crate::env::wrap_angle;
use crate::error::{Error, Result};
use crate::parallel;
use crate::planner::Dynamics;
use crate::seeding;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{loss_and_grad, nll, soft_bound, LossKind, LN_2PI};
pub use network::{Activation, Adam, Dense, ForwardCache, Mlp};
pub use weights::{cartpole_rewards, weights_from, WeightMode, WeightSpec};

/// Rows per parallel task in batched evaluation.
const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    D,
    P,
    DE,
    #[default]
    PE,
}

impl ModelKind {
    pub fn is_probabilistic(self) -> bool {
        matches!(self, ModelKind::P | ModelKind::PE)
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, ModelKind::DE | ModelKind::PE)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "D" => ModelKind::D,
            "P" => ModelKind::P,
            "DE" => ModelKind::DE,
            "PE" => ModelKind::PE,
            other => return Err(Error::param(format!("unknown model kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    #[default]
    Full,
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub ensemble_size: usize,
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_full: usize,
    pub epochs_initial: usize,
    pub epochs_incremental: usize,
    pub weight_decay: f64,
    pub logvar_min: f64,
    pub logvar_max: f64,
    /// State dimensions that are angles: encoded as (sin, cos) on input and
    /// wrapped in the predicted difference.
    pub angle_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::PE,
            ensemble_size: 5,
            width: 500,
            depth: 2,
            activation: Activation::Swish,
            learning_rate: 1e-4,
            batch_size: 16,
            epochs_full: 100,
            epochs_initial: 20,
            epochs_incremental: 10,
            weight_decay: 0.0,
            logvar_min: -10.0,
            logvar_max: 0.5,
            angle_dims: vec![crate::env::ANGLE_INDEX],
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.kind.is_ensemble(), self.ensemble_size) {
            (false, 1) => {}
            (false, e) => return Err(Error::param(format!("kind {:?} needs ensemble_size 1, got {e}", self.kind))),
            (true, e) if e < 2 => return Err(Error::param(format!("kind {:?} needs ensemble_size >= 2", self.kind))),
            _ => {}
        }
        if self.width == 0 || self.depth == 0 || self.batch_size == 0 {
            return Err(Error::param("width, depth and batch_size must be positive"));
        }
        if !(self.logvar_min < self.logvar_max) {
            return Err(Error::param("logvar_min must be below logvar_max"));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::param("learning_rate must be positive, weight_decay >= 0"));
        }
        Ok(())
    }

    fn loss_kind(&self) -> LossKind {
        if self.kind.is_probabilistic() {
            LossKind::Gaussian {
                lv_min: self.logvar_min,
                lv_max: self.logvar_max,
            }
        } else {
            LossKind::Squared
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub members: Vec<GaussianPrediction>,
    /// Average of the member means.
    pub mean_delta: Vec<f64>,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Pooled validation loss per transition.
    pub val_loss: Option<f64>,
    /// Mean of per-batch validation losses under the requested batching.
    pub val_batch_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlReport {
    /// Mean log-likelihood per transition.
    pub mean: f64,
    pub batch_means: Vec<f64>,
    pub batch_sizes: Vec<usize>,
}

impl LlReport {
    pub fn batch_median(&self) -> f64 {
        median(&self.batch_means)
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Options for one call to [`DynamicsModel::train`].
#[derive(Debug, Clone, Default)]
pub struct TrainOptions<'a> {
    pub mode: TrainMode,
    /// Per-transition loss weights aligned with the training set.
    pub weights: Option<&'a [f64]>,
    pub validation: Option<&'a TransitionSet>,
    pub val_batching: BatchMode,
    /// Overrides the epoch count implied by `mode`.
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone)]
struct Member {
    net: Mlp,
    adam: Adam,
}

#[derive(Debug, Clone)]
pub struct DynamicsModel {
    config: ModelConfig,
    state_dim: usize,
    action_dim: usize,
    members: Vec<Member>,
    normalizer: Normalizer,
    history: TrainingHistory,
    train_calls: usize,
}

/// Called after every epoch with the 1-based epoch and the current model.
pub type EpochCallback<'a> = &'a mut dyn FnMut(usize, &DynamicsModel) -> Result<()>;

impl DynamicsModel {
    pub fn new(config: ModelConfig, state_dim: usize, action_dim: usize) -> Result<Self> {
        config.validate()?;
        if let Some(&bad) = config.angle_dims.iter().find(|&&d| d >= state_dim) {
            return Err(Error::param(format!("angle dim {bad} out of range")));
        }
        let input_dim = state_dim + config.angle_dims.len() + action_dim;
        let out = if config.kind.is_probabilistic() {
            2 * state_dim
        } else {
            state_dim
        };
        let members = (0..config.ensemble_size)
            .map(|e| {
                let mut rng = seeding::rng(seeding::derive2(config.seed, 0x1417, e as u64));
                let net = Mlp::new(input_dim, config.width, config.depth, out, config.activation, &mut rng);
                let adam = Adam::new(&net);
                Member { net, adam }
            })
            .collect();
        Ok(Self {
            normalizer: Normalizer::identity(input_dim),
            config,
            state_dim,
            action_dim,
            members,
            history: TrainingHistory::default(),
            train_calls: 0,
        })
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        state_dim: usize,
        action_dim: usize,
        nets: Vec<Mlp>,
        normalizer: Normalizer,
        history: TrainingHistory,
        train_calls: usize,
    ) -> Result<Self> {
        let mut model = Self::new(config, state_dim, action_dim)?;
        if nets.len() != model.members.len() {
            return Err(Error::Checkpoint(format!(
                "{} member networks for ensemble size {}",
                nets.len(),
                model.members.len()
            )));
        }
        for (m, net) in model.members.iter_mut().zip(nets) {
            if net.layers.len() != m.net.layers.len()
                || net.layers.iter().zip(&m.net.layers).any(|(a, b)| a.weight.dim() != b.weight.dim() || a.bias.len() != b.bias.len())
            {
                return Err(Error::Checkpoint("layer shapes disagree with config".into()));
            }
            m.adam = Adam::new(&net);
            m.net = net;
        }
        if normalizer.dim() != model.input_dim() {
            return Err(Error::Checkpoint("normalizer width disagrees with config".into()));
        }
        model.normalizer = normalizer;
        model.history = history;
        model.train_calls = train_calls;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.config.angle_dims.len() + self.action_dim
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn history(&self) -> &TrainingHistory {
        &self.history
    }

    pub fn train_calls(&self) -> usize {
        self.train_calls
    }

    pub fn networks(&self) -> impl Iterator<Item = &Mlp> {
        self.members.iter().map(|m| &m.net)
    }

    pub fn ensemble_size(&self) -> usize {
        self.members.len()
    }

    pub fn param_count(&self) -> usize {
        self.members.iter().map(|m| m.net.param_count()).sum()
    }

    /// Reorder ensemble members.
    pub fn permute_members(&mut self, order: &[usize]) -> Result<()> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.members.len()).collect::<Vec<_>>() {
            return Err(Error::param("not a permutation of the members"));
        }
        self.members = order.iter().map(|&i| self.members[i].clone()).collect();
        Ok(())
    }

    fn encode_row(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        let mut k = 0;
        for (j, &v) in s.iter().enumerate() {
            if self.config.angle_dims.contains(&j) {
                out[k] = v.sin();
                out[k + 1] = v.cos();
                k += 2;
            } else {
                out[k] = v;
                k += 1;
            }
        }
        out[k..k + a.len()].copy_from_slice(a);
    }

    fn encode_raw(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        let mut x = Array2::zeros((states.nrows(), self.input_dim()));
        for ((s, a), mut row) in states.outer_iter().zip(actions.outer_iter()).zip(x.outer_iter_mut()) {
            let s = s.to_vec();
            let a = a.to_vec();
            self.encode_row(&s, &a, row.as_slice_mut().expect("standard layout"));
        }
        x
    }

    /// Encoded and z-scored network inputs.
    fn encode(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        let mut x = self.encode_raw(states, actions);
        let n = &self.normalizer;
        for mut row in x.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - n.mean[j]) / n.std[j];
            }
        }
        x
    }

    fn set_matrices(&self, set: &TransitionSet) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
        if set.state_dim != self.state_dim || set.action_dim != self.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim + self.action_dim,
                got: set.input_dim(),
            });
        }
        let n = set.len();
        let mut states = Array2::zeros((n, self.state_dim));
        let mut actions = Array2::zeros((n, self.action_dim));
        let mut deltas = Array2::zeros((n, self.state_dim));
        for (i, t) in set.transitions.iter().enumerate() {
            for j in 0..self.state_dim {
                states[[i, j]] = t.s[j];
                let mut d = t.s_next[j] - t.s[j];
                if self.config.angle_dims.contains(&j) {
                    d = wrap_angle(d);
                }
                deltas[[i, j]] = d;
            }
            for j in 0..self.action_dim {
                actions[[i, j]] = t.a[j];
            }
        }
        Ok((states, actions, deltas))
    }

    /// Raw network outputs of every member for encoded inputs `x`.
    fn member_outputs(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        self.members.iter().map(|m| m.net.forward(x)).collect()
    }

    fn split_output(&self, out: &Array2<f64>, row: usize) -> GaussianPrediction {
        let d = self.state_dim;
        let mean = (0..d).map(|j| out[[row, j]]).collect();
        let logvar = if self.config.kind.is_probabilistic() {
            (0..d)
                .map(|j| soft_bound(out[[row, d + j]], self.config.logvar_min, self.config.logvar_max).0)
                .collect()
        } else {
            vec![self.config.logvar_min; d]
        };
        GaussianPrediction { mean, logvar }
    }

    pub fn predict(&self, s: &[f64], a: &[f64]) -> Result<Prediction> {
        if s.len() != self.state_dim || a.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim + self.action_dim,
                got: s.len() + a.len(),
            });
        }
        if s.iter().chain(a).any(|v| !v.is_finite()) {
            return Err(Error::InvalidState("non-finite model input".into()));
        }
        let states = ArrayView2::from_shape((1, s.len()), s).expect("row");
        let actions = ArrayView2::from_shape((1, a.len()), a).expect("row");
        let x = self.encode(states, actions);
        let members: Vec<GaussianPrediction> = self
            .member_outputs(x.view())
            .iter()
            .map(|o| self.split_output(o, 0))
            .collect();
        let e = members.len() as f64;
        let mean_delta: Vec<f64> = (0..self.state_dim)
            .map(|j| members.iter().map(|m| m.mean[j]).sum::<f64>() / e)
            .collect();
        let next_state = self.apply_delta(s, &mean_delta);
        Ok(Prediction {
            members,
            mean_delta,
            next_state,
        })
    }

    fn apply_delta(&self, s: &[f64], delta: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(delta)
            .enumerate()
            .map(|(j, (v, d))| {
                if self.config.angle_dims.contains(&j) {
                    wrap_angle(v + d)
                } else {
                    v + d
                }
            })
            .collect()
    }

    /// Per-transition log-likelihood under the member mixture.
    pub fn sample_log_likelihood(&self, set: &TransitionSet) -> Result<Vec<f64>> {
        let (states, actions, deltas) = self.set_matrices(set)?;
        let n = set.len();
        let chunks = n.div_ceil(EVAL_CHUNK);
        let ln_e = (self.members.len() as f64).ln();
        let per_chunk = parallel::map_range(chunks, |c| {
            let lo = c * EVAL_CHUNK;
            let hi = (lo + EVAL_CHUNK).min(n);
            let x = self.encode(states.slice(s![lo..hi, ..]), actions.slice(s![lo..hi, ..]));
            let outs = self.member_outputs(x.view());
            (lo..hi)
                .map(|i| {
                    let y = deltas.row(i).to_vec();
                    let logs: Vec<f64> = outs
                        .iter()
                        .map(|o| {
                            let p = self.split_output(o, i - lo);
                            -nll(&p.mean, &p.logvar, &y)
                        })
                        .collect();
                    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln() - ln_e
                })
                .collect::<Vec<_>>()
        });
        Ok(per_chunk.into_iter().flatten().collect())
    }

    /// Mean log-likelihood per transition, with per-batch means for `batching`.
    pub fn evaluate_ll(&self, set: &TransitionSet, batching: BatchMode, batch_size: usize, seed: u64) -> Result<LlReport> {
        if set.is_empty() {
            return Err(Error::param("cannot evaluate on an empty set"));
        }
        let ll = self.sample_log_likelihood(set)?;
        Ok(report(&ll, &batches(set, batch_size, batching, seed)?))
    }

    /// Validation loss per transition: NLL for Gaussian kinds, squared error
    /// of the ensemble mean otherwise.
    pub fn sample_losses(&self, set: &TransitionSet) -> Result<Vec<f64>> {
        if self.config.kind.is_probabilistic() {
            return Ok(self.sample_log_likelihood(set)?.into_iter().map(|l| -l).collect());
        }
        let (states, actions, deltas) = self.set_matrices(set)?;
        let x = self.encode(states.view(), actions.view());
        let outs = self.member_outputs(x.view());
        let e = outs.len() as f64;
        Ok((0..set.len())
            .map(|i| {
                (0..self.state_dim)
                    .map(|j| {
                        let m = outs.iter().map(|o| o[[i, j]]).sum::<f64>() / e;
                        (m - deltas[[i, j]]).powi(2)
                    })
                    .sum()
            })
            .collect())
    }

    pub fn train(
        &mut self,
        train_set: &TransitionSet,
        opts: &TrainOptions<'_>,
        mut callback: Option<EpochCallback<'_>>,
    ) -> Result<()> {
        if train_set.is_empty() {
            return Err(Error::param("training set is empty"));
        }
        let n = train_set.len();
        let ones;
        let weights = match opts.weights {
            Some(w) if w.len() == n => w,
            Some(w) => return Err(Error::DimensionMismatch { expected: n, got: w.len() }),
            None => {
                ones = vec![1.0; n];
                &ones
            }
        };
        let epochs = opts.epochs.unwrap_or(match opts.mode {
            TrainMode::Full => self.config.epochs_full,
            TrainMode::Incremental if self.train_calls == 0 => self.config.epochs_initial,
            TrainMode::Incremental => self.config.epochs_incremental,
        });
        let (states, actions, deltas) = self.set_matrices(train_set)?;
        let raw = self.encode_raw(states.view(), actions.view());
        self.normalizer = Normalizer::fit(raw.outer_iter().map(|r| r.to_slice().expect("standard layout")))?;
        let x = self.encode(states.view(), actions.view());

        let call = self.train_calls as u64;
        let seed = self.config.seed;
        let bootstrap = self.config.kind.is_ensemble();
        let mut rngs: Vec<seeding::Rng> = (0..self.members.len())
            .map(|e| seeding::rng(seeding::derive2(seed, call + 1, e as u64)))
            .collect();
        let indices: Vec<Vec<usize>> = rngs
            .iter_mut()
            .map(|rng| {
                if bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                }
            })
            .collect();

        let batch_size = self.config.batch_size;
        let lr = self.config.learning_rate;
        let wd = self.config.weight_decay;
        let loss_kind = self.config.loss_kind();
        let val_seed = seeding::derive(seed, 0x7a1);
        for epoch in 0..epochs {
            let mut work: Vec<(&mut Member, &mut seeding::Rng, &Vec<usize>)> = self
                .members
                .iter_mut()
                .zip(rngs.iter_mut())
                .zip(&indices)
                .map(|((m, r), i)| (m, r, i))
                .collect();
            let mut results: Vec<Result<f64>> = Vec::new();
            results.resize_with(work.len(), || Ok(0.0));
            let mut slots: Vec<_> = work.iter_mut().zip(results.iter_mut()).collect();
            parallel::for_each_mut(&mut slots, |_, (w, out)| {
                let (member, rng, idx) = w;
                **out = train_epoch(member, rng, idx, &x, &deltas, weights, batch_size, lr, wd, loss_kind, epoch);
            });
            drop(slots);
            let losses = results.into_iter().collect::<Result<Vec<f64>>>()?;
            let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
            let (val_loss, val_batch_loss) = match opts.validation {
                Some(v) if !v.is_empty() => {
                    let per = self.sample_losses(v)?;
                    let bs = batches(v, batch_size, opts.val_batching, val_seed)?;
                    let rep = report(&per, &bs);
                    let batch_mean = rep.batch_means.iter().sum::<f64>() / rep.batch_means.len() as f64;
                    (Some(rep.mean), Some(batch_mean))
                }
                _ => (None, None),
            };
            self.history.epochs.push(EpochRecord {
                epoch: self.history.epochs.len() + 1,
                train_loss,
                val_loss,
                val_batch_loss,
            });
            if let Some(cb) = callback.as_mut() {
                cb(epoch + 1, self)?;
            }
        }
        self.train_calls += 1;
        Ok(())
    }

    /// Number of output-layer parameters across all members.
    pub fn output_layer_len(&self) -> usize {
        self.members
            .iter()
            .map(|m| m.net.layers.last().map_or(0, Dense::param_count))
            .sum()
    }

    /// Final-layer weights (row-major) then biases, member by member.
    pub fn output_layer_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_layer_len());
        for m in &self.members {
            let last = m.net.layers.last().expect("at least one layer");
            out.extend(last.weight.iter());
            out.extend(last.bias.iter());
        }
        out
    }

    /// Copy of this model with the final affine maps replaced.
    pub fn with_output_layer(&self, params: &[f64]) -> Result<DynamicsModel> {
        if params.len() != self.output_layer_len() {
            return Err(Error::DimensionMismatch {
                expected: self.output_layer_len(),
                got: params.len(),
            });
        }
        let mut model = self.clone();
        let mut offset = 0;
        for m in &mut model.members {
            let last = m.net.layers.last_mut().expect("at least one layer");
            for w in last.weight.iter_mut().chain(last.bias.iter_mut()) {
                *w = params[offset];
                offset += 1;
            }
        }
        Ok(model)
    }
}

fn report(values: &[f64], batches: &[Vec<usize>]) -> LlReport {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let batch_means = batches
        .iter()
        .map(|b| b.iter().map(|&i| values[i]).sum::<f64>() / b.len() as f64)
        .collect();
    LlReport {
        mean,
        batch_means,
        batch_sizes: batches.iter().map(Vec::len).collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn train_epoch(
    member: &mut Member,
    rng: &mut seeding::Rng,
    indices: &[usize],
    x: &Array2<f64>,
    y: &Array2<f64>,
    weights: &[f64],
    batch_size: usize,
    lr: f64,
    weight_decay: f64,
    kind: LossKind,
    epoch: usize,
) -> Result<f64> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut count = 0;
    for (b, batch) in order.chunks(batch_size).enumerate() {
        let xb = x.select(Axis(0), batch);
        let yb = y.select(Axis(0), batch);
        let wb: Vec<f64> = batch.iter().map(|&i| weights[i]).collect();
        let (out, cache) = member.net.forward_cached(xb.view());
        let (losses, grad) = loss_and_grad(kind, out.view(), yb.view(), &wb);
        let batch_loss = losses.iter().zip(&wb).map(|(l, w)| l * w).sum::<f64>() / batch.len() as f64;
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: b });
        }
        let grads = member.net.backward(&cache, grad);
        member.adam.step(&mut member.net, &grads, lr, weight_decay);
        total += batch_loss;
        count += 1;
    }
    Ok(total / count as f64)
}

impl Dynamics for DynamicsModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict_next(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        let x = self.encode(states, actions);
        let d = self.state_dim;
        let e = self.members.len() as f64;
        let mut next = states.to_owned();
        for m in &self.members {
            let out = m.net.forward(x.view());
            next += &(&out.slice(s![.., ..d]) / e);
        }
        for &j in &self.config.angle_dims {
            next.column_mut(j).mapv_inplace(wrap_angle);
        }
        next
    }
}
