//! SGD with momentum, weight decay, and a stepped learning-rate schedule.
//!
//! The update is `v ← momentum·v + g + weight_decay·θ; θ ← θ − lr·v`, i.e.
//! weight decay enters the velocity. Batches are drawn by seeded shuffling
//! each epoch and the trailing partial batch is kept, so the loss average is
//! exact. Training is bit-deterministic for a fixed (seed, config, dataset).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::logistic::OneHotLabel;
use crate::model::{dataset_loss_accuracy, MlpModel};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Completed-epoch numbers (1-based) at which to keep a model snapshot.
    pub snapshot_epochs: Vec<usize>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("need at least one epoch".into()));
        }
        Ok(())
    }
}

/// Default snapshot grid: powers of two up to the final epoch, plus the
/// final epoch itself.
pub fn geometric_snapshot_epochs(epochs: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut e = 1usize;
    while e < epochs {
        out.push(e);
        e *= 2;
    }
    out.push(epochs);
    out
}

/// Stepped schedule: the initial rate for the first third of training, a
/// tenth of it for the middle third, a hundredth for the rest.
pub fn lr_schedule(initial_lr: f64, epochs: usize, epoch: usize) -> f64 {
    debug_assert!(epoch < epochs);
    let first = epochs.div_ceil(3);
    let second = (2 * epochs).div_ceil(3);
    if epoch < first {
        initial_lr
    } else if epoch < second {
        initial_lr / 10.0
    } else {
        initial_lr / 100.0
    }
}

/// One epoch record of the training trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based count of completed epochs.
    pub epoch: usize,
    /// Mean loss over the full training set after this epoch's updates.
    pub loss: f64,
    /// Train accuracy after this epoch's updates.
    pub accuracy: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Loss/accuracy per epoch plus the requested snapshots.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    /// Snapshots keyed by completed-epoch number, ascending.
    pub snapshots: Vec<(usize, MlpModel)>,
}

/// `v ← momentum·v + g + weight_decay·θ; θ ← θ − lr·v`
fn sgd_step(
    params: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// Train `model` on `dataset`. Returns the trained model and its trace.
pub fn sgd_train(
    model: &MlpModel,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainTrace)> {
    cfg.validate()?;
    if model.input_dim() != dataset.dim() {
        return Err(Error::Data(format!(
            "model expects {} inputs, dataset has {}",
            model.input_dim(),
            dataset.dim()
        )));
    }
    if model.class_count() != dataset.class_count() {
        return Err(Error::Data(format!(
            "model has {} outputs, dataset has {} classes",
            model.class_count(),
            dataset.class_count()
        )));
    }
    let mut model = model.clone();
    let p = model.param_count();
    let mut velocity = vec![0.0; p];
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(cfg.initial_lr, cfg.epochs, epoch);
        order.shuffle(&mut rng);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = vec![0.0; p];
            let mut batch_loss = 0.0;
            for &i in batch {
                let y = OneHotLabel::new(dataset.label(i), model.class_count())?;
                let g = model.loss_grad(dataset.example(i), y)?;
                for (a, v) in grad.iter_mut().zip(&g) {
                    *a += v;
                }
                batch_loss += model.loss(dataset.example(i), y)?;
            }
            let inv = 1.0 / batch.len() as f64;
            for g in &mut grad {
                *g *= inv;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch: epoch + 1, batch: batch_no });
            }
            sgd_step(
                model.params_mut().values_mut(),
                &mut velocity,
                &grad,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            );
        }
        let (loss, accuracy) = dataset_loss_accuracy(&model, dataset)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, batch: 0 });
        }
        records.push(EpochRecord { epoch: epoch + 1, loss, accuracy, lr });
        if cfg.snapshot_epochs.contains(&(epoch + 1)) {
            snapshots.push((epoch + 1, model.clone()));
        }
    }
    Ok((model, TrainTrace { records, snapshots }))
}
