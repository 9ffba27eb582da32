//! Minibatch Adam training with plateau learning-rate decay and early stopping.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::episode::{generate_episode, Episode, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::{label, path_seed};
use crate::tape::Tensor;

use super::params::{clip_global_norm, Adam, AdamConfig};
use super::rollout::{episode_gradients, rollout_loss};
use super::{Controller, TrainConfig};

/// One line of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    /// Mean training loss over the epoch; `NaN` before the first update.
    pub train_loss: f64,
    /// Mean over validation episodes of the frame- and block-averaged minimum rate.
    pub val_min_rate: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_min_rate,learning_rate\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.10e},{:.10e},{:.6e}", r.epoch, r.train_loss, r.val_min_rate, r.learning_rate);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation metric.
    pub controller: Controller,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub best_val_min_rate: f64,
    /// Set when training stopped on a non-finite loss or parameter.
    pub aborted: Option<String>,
}

pub fn train_episode_seed(root: u64, epoch: usize, index: usize) -> u64 {
    path_seed(root, &[label::TRAIN, epoch as u64, index as u64])
}

pub fn validation_episode_seed(root: u64, index: usize) -> u64 {
    path_seed(root, &[label::VALID, index as u64])
}

/// Mean frame- and block-averaged minimum rate with network powers.
pub fn validation_min_rate(ctrl: &Controller, sys: &SystemConfig, episodes: &[Episode], frames: usize, parallel: bool) -> Result<f64> {
    let eval = |e: &Episode| rollout_loss(ctrl, sys, e, frames).map(|r| -r.tape.value(r.loss).data[0]);
    let vals: Vec<f64> = if parallel {
        episodes.par_iter().map(eval).collect::<Result<_>>()?
    } else {
        episodes.iter().map(eval).collect::<Result<_>>()?
    };
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Trains `ctrl` on freshly generated episodes. `progress` sees every history row.
pub fn train(
    mut ctrl: Controller,
    sys: &SystemConfig,
    cfg: &TrainConfig,
    seed: u64,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    sys.validate()?;
    let frames = cfg.frames;
    let validation: Vec<Episode> = (0..cfg.validation_episodes)
        .map(|i| generate_episode(sys, validation_episode_seed(seed, i), frames))
        .collect::<Result<_>>()?;
    let mut history = TrainHistory::default();
    let mut lr = cfg.learning_rate;
    let val0 = validation_min_rate(&ctrl, sys, &validation, frames, cfg.parallel)?;
    let row = HistoryRow { epoch: 0, train_loss: f64::NAN, val_min_rate: val0, learning_rate: lr };
    progress(&row);
    history.rows.push(row);
    let mut best = (ctrl.clone(), 0usize, val0);
    let mut since_best = 0usize;
    let mut since_decay = 0usize;
    let mut adam = Adam::new(&ctrl.store, AdamConfig { learning_rate: lr, ..AdamConfig::default() });
    let mut aborted = None;

    'epochs: for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        let mut start = 0;
        while start < cfg.episodes_per_epoch {
            let end = (start + cfg.minibatch).min(cfg.episodes_per_epoch);
            let run = |i: usize| -> Result<(f64, Vec<Tensor>)> {
                let ep = generate_episode(sys, train_episode_seed(seed, epoch, i), frames)?;
                episode_gradients(&ctrl, sys, &ep, frames)
            };
            let results: Vec<Result<(f64, Vec<Tensor>)>> = if cfg.parallel {
                (start..end).into_par_iter().map(run).collect()
            } else {
                (start..end).map(run).collect()
            };
            let mut grads = ctrl.store.zeros_like();
            for r in results {
                let (loss, g) = match r {
                    Ok(v) => v,
                    Err(Error::NonFinite(msg)) => {
                        aborted = Some(msg);
                        break 'epochs;
                    }
                    Err(e) => return Err(e),
                };
                loss_sum += loss;
                count += 1;
                for (acc, gi) in grads.iter_mut().zip(&g) {
                    acc.add_assign(gi);
                }
            }
            let scale = 1.0 / (end - start) as f64;
            for g in grads.iter_mut() {
                g.data.iter_mut().for_each(|x| *x *= scale);
            }
            if grads.iter().any(|g| g.data.iter().any(|x| !x.is_finite())) {
                aborted = Some(format!("non-finite gradient in epoch {epoch}"));
                break 'epochs;
            }
            if cfg.grad_clip > 0.0 {
                clip_global_norm(&mut grads, cfg.grad_clip);
            }
            adam.config.learning_rate = lr;
            adam.update(&mut ctrl.store, &grads);
            if !ctrl.store.all_finite() {
                aborted = Some(format!("non-finite parameters after an update in epoch {epoch}"));
                break 'epochs;
            }
            start = end;
        }
        let val = validation_min_rate(&ctrl, sys, &validation, frames, cfg.parallel)?;
        let row = HistoryRow { epoch, train_loss: loss_sum / count.max(1) as f64, val_min_rate: val, learning_rate: lr };
        progress(&row);
        history.rows.push(row);
        if val > best.2 {
            best = (ctrl.clone(), epoch, val);
            since_best = 0;
            since_decay = 0;
        } else {
            since_best += 1;
            since_decay += 1;
            if since_best >= cfg.patience {
                break;
            }
            if since_decay >= cfg.lr_patience {
                lr *= cfg.lr_decay;
                since_decay = 0;
            }
        }
    }
    let (controller, best_epoch, best_val_min_rate) = best;
    Ok(TrainOutcome { controller, history, best_epoch, best_val_min_rate, aborted })
}
