//! Controller reward re-evaluated while a model trains.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::mean;
use super::store::{fmt_f64, write_csv, RecordStore};
use super::sweep::EvalConfig;
use crate::data::TransitionSet;
use crate::env::{ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, ModelConfig, TrainOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochCurveConfig {
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub eval_every: usize,
}

impl Default for EpochCurveConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
            eval_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean validation loss per transition, by dataset tag.
    pub val_loss: BTreeMap<String, f64>,
    pub mean_reward: f64,
    pub reward_per_episode: Vec<f64>,
}

/// Train on `train_set` and, every `eval_every` epochs, evaluate the
/// snapshot on each validation set and with MPC.
pub fn epoch_reward_curve(
    cfg: &EpochCurveConfig,
    train_set: &TransitionSet,
    val_sets: &[(String, TransitionSet)],
    store: &mut RecordStore,
) -> Result<Vec<EpochRow>> {
    if cfg.eval_every == 0 {
        return Err(Error::param("eval_every must be at least 1"));
    }
    store.get_or_put("curve", || {
        let mut model = DynamicsModel::new(cfg.model.clone(), STATE_DIM, ACTION_DIM)?;
        let mut rows = Vec::new();
        let mut callback = |epoch: usize, snapshot: &DynamicsModel| -> Result<()> {
            if !epoch.is_multiple_of(cfg.eval_every) {
                return Ok(());
            }
            let train_loss = snapshot.history().epochs.last().map_or(f64::NAN, |e| e.train_loss);
            let val_loss = val_sets
                .iter()
                .map(|(tag, set)| Ok((tag.clone(), mean(&snapshot.sample_losses(set)?))))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let rewards = cfg.eval.rewards(snapshot, &cfg.eval.env)?;
            log::info!("epoch {epoch}: reward {:.2}", mean(&rewards));
            rows.push(EpochRow {
                epoch,
                train_loss,
                val_loss,
                mean_reward: mean(&rewards),
                reward_per_episode: rewards,
            });
            Ok(())
        };
        model.train(train_set, &TrainOptions::default(), Some(&mut callback))?;
        Ok(rows)
    })
}

pub fn write_epoch_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let tags: Vec<String> = rows.first().map(|r| r.val_loss.keys().cloned().collect()).unwrap_or_default();
    let mut header: Vec<String> = vec!["epoch".into(), "train_loss".into()];
    header.extend(tags.iter().map(|t| format!("val_{t}")));
    header.push("mean_reward".into());
    write_csv(
        path,
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.epoch.to_string(), fmt_f64(r.train_loss)];
            row.extend(tags.iter().map(|t| fmt_f64(r.val_loss[t])));
            row.push(fmt_f64(r.mean_reward));
            row
        }),
    )
}
