//! Training loop: Adam over mini-batches of windows, milestone learning-rate
//! decay, early stopping on validation loss, best-epoch snapshotting.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::model::optim::{lr_at_epoch, Adam};
use crate::model::{huber_loss, stream_rng, Forecaster, ForwardMode, ModelConfig};
use crate::spatial::draw_mask_noise;
use crate::tensor::{backward, Tensor};
use crate::{Error, Result};

/// Stops training when validation loss has not strictly improved for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStop {
    patience: usize,
    best: f64,
    since: usize,
}

impl EarlyStop {
    pub fn new(patience: usize) -> EarlyStop {
        EarlyStop {
            patience,
            best: f64::INFINITY,
            since: 0,
        }
    }

    /// Record one validation loss; returns whether it improved the best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since = 0;
            true
        } else {
            self.since += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.since >= self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Wall-clock duration of the epoch. The one non-deterministic field in
    /// any artifact; everything else is byte-reproducible for a fixed seed.
    pub wall_ms: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch, not the last one.
    pub model: Forecaster,
    pub log: Vec<EpochRecord>,
    /// Every mini-batch loss, in order — the full optimization trace.
    pub step_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn check_compatible(config: &ModelConfig, dataset: &Dataset) -> Result<()> {
    if config.n != dataset.nodes || config.t != dataset.t || config.h != dataset.h {
        return Err(Error::Config(format!(
            "config (t={}, h={}, n={}) does not match dataset (t={}, h={}, n={})",
            config.t, config.h, config.n, dataset.t, dataset.h, dataset.nodes
        )));
    }
    Ok(())
}

/// Mean eval-mode Huber loss over one split, weighted per window.
fn split_loss(model: &Forecaster, dataset: &Dataset, split: Split) -> Result<f64> {
    let idxs: Vec<usize> = dataset.split_range(split).collect();
    let mut sum = 0.0;
    for chunk in idxs.chunks(model.config.batch_size) {
        let batch = dataset.batch(chunk);
        let pred = model.forward(&batch, &ForwardMode::Eval)?;
        let target = Tensor::from_vec(
            batch.y_normalized(&dataset.normalizer),
            &[batch.b, batch.h, batch.n],
        )?;
        sum += huber_loss(&pred, &target, model.config.delta)?.item() * batch.b as f64;
    }
    Ok(sum / idxs.len() as f64)
}

pub fn train(config: &ModelConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    check_compatible(config, dataset)?;
    let mut model = Forecaster::new(config, dataset.steps_per_day)?;
    let mut adam = Adam::new();
    let mut shuffle_rng = stream_rng(config.seed, 1);
    let mut noise_rng = stream_rng(config.seed, 2);
    let needs_noise = !(config.ablation.no_spatial || config.ablation.no_mask);

    let mut best = model.clone();
    let mut stopper = EarlyStop::new(config.patience);
    let mut best_epoch = 0;
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let mut stopped_early = false;
    let mut global_step = 0usize;

    let train_idxs: Vec<usize> = dataset.split_range(Split::Train).collect();
    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(config.lr, &config.lr_milestones, config.lr_decay, epoch);
        let mut order = train_idxs.clone();
        order.shuffle(&mut shuffle_rng);

        let mut train_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = dataset.batch(chunk);
            let mode = if needs_noise {
                ForwardMode::Train {
                    noise: draw_mask_noise(&mut noise_rng, batch.b, batch.n),
                }
            } else {
                ForwardMode::Eval // no stochastic stage left
            };
            let pred = model.forward(&batch, &mode)?;
            let target = Tensor::from_vec(
                batch.y_normalized(&dataset.normalizer),
                &[batch.b, batch.h, batch.n],
            )?;
            let loss = huber_loss(&pred, &target, config.delta)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                });
            }
            step_losses.push(value);
            train_sum += value * batch.b as f64;
            let grads = backward(&loss)?;
            adam.step(&mut model, &grads, lr)?;
            global_step += 1;
        }
        let train_loss = train_sum / train_idxs.len() as f64;
        let val_loss = split_loss(&model, dataset, Split::Val)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: global_step,
            });
        }
        if stopper.observe(val_loss) {
            best = model.clone();
            best_epoch = epoch;
        }
        log.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        model: best,
        log,
        step_losses,
        best_epoch,
        best_val_loss: stopper.best(),
        stopped_early,
    })
}
