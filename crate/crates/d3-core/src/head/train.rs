//! Mini-batch training loop for heads: Adam, shuffled epochs, and selection
//! of the best epoch by validation accuracy.

use super::model::{GradBuffer, HeadError, HeadModel};
use crate::metrics::{mean_accuracy, Domain, MetricsError, ScoredSample};
use crate::rng::derive_rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.0,
            batch_size: 128,
            epochs: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(TrainError::BadConfig(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// One labeled example: the two embeddings of the same augmented image.
#[derive(Clone, Debug)]
pub struct PairSample {
    pub original: Vec<f32>,
    pub disrupted: Vec<f32>,
    /// 1 = synthetic, 0 = camera-like.
    pub label: u8,
    pub generator_id: String,
    pub architecture_group: String,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training samples")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("epoch {0} validated before it was trained")]
    ValidateBeforeTrain(u32),
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    fn new(model: &HeadModel) -> Self {
        let shapes: Vec<usize> = model.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut HeadModel, grads: &GradBuffer, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.t as i32);
        let gts = grads.0.tensors();
        for (ti, theta) in model.tensors_mut().into_iter().enumerate() {
            let gt = gts[ti];
            let mt = &mut self.m[ti];
            let vt = &mut self.v[ti];
            for i in 0..theta.len() {
                let g = gt[i] + cfg.weight_decay * theta[i];
                mt[i] = cfg.adam_beta1 * mt[i] + (1.0 - cfg.adam_beta1) * g;
                vt[i] = cfg.adam_beta2 * vt[i] + (1.0 - cfg.adam_beta2) * g * g;
                let mhat = mt[i] / bc1;
                let vhat = vt[i] / bc2;
                theta[i] -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps);
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

pub struct TrainOutcome {
    pub model: HeadModel,
    pub best_epoch: u32,
    pub best_val_accuracy: f64,
    pub log: Vec<EpochLog>,
}

/// Drives one model through shuffled mini-batch epochs. `train_epoch` and
/// `validate_epoch` are split so several trainers can consume one shared
/// stream of freshly augmented samples in lockstep.
pub struct Trainer {
    model: HeadModel,
    adam: AdamState,
    cfg: TrainConfig,
    grads: GradBuffer,
    pending_loss: Option<(u32, f64)>,
    best: Option<(f64, u32, HeadModel)>,
    log: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(model: HeadModel, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        let adam = AdamState::new(&model);
        let grads = model.grad_buffer();
        Ok(Self { model, adam, cfg, grads, pending_loss: None, best: None, log: Vec::new() })
    }

    pub fn model(&self) -> &HeadModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Runs one pass over `samples` in a seeded shuffled order; returns the
    /// mean per-sample loss.
    pub fn train_epoch(&mut self, epoch: u32, samples: &[PairSample]) -> Result<f64, TrainError> {
        if samples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = derive_rng(self.cfg.seed, "order", &[u64::from(epoch)]);
        order.shuffle(&mut rng);

        let dim = self.model.dim();
        let mode = self.model.pair_mode();
        let mut total_loss = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            self.grads.zero();
            for &i in batch {
                let s = &samples[i];
                let x = mode.assemble(&s.original, &s.disrupted, dim)?;
                let (loss, _) = self.model.loss_grad(&x, f64::from(s.label), &mut self.grads);
                total_loss += loss;
            }
            self.grads.scale(1.0 / batch.len() as f64);
            self.adam.step(&mut self.model, &self.grads, &self.cfg);
        }
        let mean_loss = total_loss / samples.len() as f64;
        self.pending_loss = Some((epoch, mean_loss));
        Ok(mean_loss)
    }

    /// Scores the validation set, logs the epoch, and keeps the parameters
    /// whenever accuracy strictly improves (ties keep the earlier epoch).
    pub fn validate_epoch(
        &mut self,
        epoch: u32,
        val: &[PairSample],
    ) -> Result<f64, TrainError> {
        let (loss_epoch, train_loss) =
            self.pending_loss.take().ok_or(TrainError::ValidateBeforeTrain(epoch))?;
        debug_assert_eq!(loss_epoch, epoch);
        let scored = scored_samples(&self.model, val, Domain::Id)?;
        let accuracy = mean_accuracy(&scored, 0.5)?.total_mean;
        self.log.push(EpochLog { epoch, train_loss, val_accuracy: accuracy });
        let improved = self.best.as_ref().is_none_or(|(best, _, _)| accuracy > *best);
        if improved {
            self.best = Some((accuracy, epoch, self.model.clone()));
        }
        Ok(accuracy)
    }

    pub fn finish(self) -> TrainOutcome {
        match self.best {
            Some((best_val_accuracy, best_epoch, model)) => {
                TrainOutcome { model, best_epoch, best_val_accuracy, log: self.log }
            }
            None => TrainOutcome {
                model: self.model,
                best_epoch: 0,
                best_val_accuracy: f64::NAN,
                log: self.log,
            },
        }
    }
}

/// Fixed-dataset convenience wrapper (no per-epoch augmentation).
pub fn train_on_fixed(
    model: HeadModel,
    cfg: TrainConfig,
    train: &[PairSample],
    val: &[PairSample],
) -> Result<TrainOutcome, TrainError> {
    let epochs = cfg.epochs;
    let mut trainer = Trainer::new(model, cfg)?;
    for epoch in 0..epochs {
        trainer.train_epoch(epoch, train)?;
        trainer.validate_epoch(epoch, val)?;
    }
    Ok(trainer.finish())
}

pub fn predict_batch(model: &HeadModel, samples: &[PairSample]) -> Result<Vec<f64>, HeadError> {
    samples
        .iter()
        .map(|s| model.probability_for_pair(&s.original, &s.disrupted))
        .collect()
}

/// Scores samples into the shape the accuracy/AP metrics consume.
pub fn scored_samples(
    model: &HeadModel,
    samples: &[PairSample],
    domain: Domain,
) -> Result<Vec<ScoredSample>, HeadError> {
    samples
        .iter()
        .map(|s| {
            Ok(ScoredSample {
                probability: model.probability_for_pair(&s.original, &s.disrupted)?,
                label: s.label,
                generator_id: s.generator_id.clone(),
                architecture_group: s.architecture_group.clone(),
                domain,
            })
        })
        .collect()
}
