//! End-to-end training: teacher-forced NLL plus maneuver cross-entropy,
//! minimized by mini-batch Adam with global-norm clipping. Batch order and
//! gradient reduction order are fixed by the seed, so a run is reproducible
//! bit for bit.

pub mod adam;
pub mod loss;

pub use adam::{clip_global_norm, scale_grads, Adam};
pub use loss::{gaussian_nll, gaussian_nll_decoded, gaussian_nll_step, maneuver_ce, maneuver_ce_heads};

use crate::dataset::SceneSample;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::params::Bound;
use crate::nn::tape::{Tape, Var};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Global-norm gradient clip.
    pub clip_norm: f64,
    pub seed: u64,
    /// Weight of the trajectory NLL term.
    pub lambda_traj: f64,
    /// Weight of the maneuver cross-entropy term.
    pub lambda_mnv: f64,
    /// Keep parameters f32-representable after every step so checkpoints
    /// round-trip bitwise.
    pub snap_f32: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 10,
            clip_norm: 10.0,
            seed: 0,
            lambda_traj: 1.0,
            lambda_mnv: 1.0,
            snap_f32: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.clip_norm <= 0.0 {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Tape-level loss of one sample: lambda_traj * NLL (teacher-forced
/// ground-truth mode) + lambda_mnv * maneuver cross-entropy.
pub fn sample_loss(
    model: &Model,
    tape: &mut Tape,
    bound: &Bound,
    sample: &SceneSample,
    cfg: &TrainConfig,
) -> Result<Var> {
    let fwd = model.forward_training(tape, bound, sample)?;
    let targets = model.targets(sample);
    let nll = gaussian_nll_decoded(tape, &fwd.decoded, &targets)?;
    let mut total = tape.scale(nll, cfg.lambda_traj);
    if let Some((p_loc, p_acc)) = fwd.heads {
        let ce = maneuver_ce_heads(tape, p_loc, p_acc, &sample.label)?;
        let weighted = tape.scale(ce, cfg.lambda_mnv);
        total = tape.add(total, weighted)?;
    }
    Ok(total)
}

/// Mean loss over a set without touching gradients.
pub fn evaluate_loss(model: &Model, samples: &[SceneSample], cfg: &TrainConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("cannot evaluate loss on an empty set".into()));
    }
    let mut total = 0.0;
    for sample in samples {
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape);
        let loss = sample_loss(model, &mut tape, &bound, sample, cfg)?;
        total += tape.scalar_value(loss);
    }
    Ok(total / samples.len() as f64)
}

/// Train in place; returns the per-epoch metrics log.
pub fn train(
    model: &mut Model,
    train_set: &[SceneSample],
    val_set: &[SceneSample],
    cfg: &TrainConfig,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut adam = Adam::new(cfg.learning_rate);
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = Rng::seed_from_u64(cfg.seed).derive(epoch as u64 + 1);
        rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            model.params.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let sample = &train_set[i];
                let mut tape = Tape::new();
                let bound = model.params.bind(&mut tape);
                let loss = sample_loss(model, &mut tape, &bound, sample, cfg)?;
                let value = tape.scalar_value(loss);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {value} at epoch {epoch}, batch {batch_idx}, \
                         sample ({}, {})",
                        sample.vehicle_id, sample.anchor_frame
                    )));
                }
                batch_loss += value;
                let grads = tape.backward(loss)?;
                model.params.accumulate_grads(&grads, &bound);
            }
            scale_grads(&mut model.params, 1.0 / batch.len() as f64);
            clip_global_norm(&mut model.params, cfg.clip_norm);
            adam.step(&mut model.params);
            if cfg.snap_f32 {
                model.params.snap_to_f32();
            }
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, val_set, cfg)?)
        };
        metrics.push(EpochMetrics {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok(metrics)
}
