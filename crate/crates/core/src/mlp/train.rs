use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{clipped_nll, softmax_cross_entropy};
use super::{MlpModel, Mode};
use crate::error::{Error, Result};

/// Minimum validation-loss decrease that counts as progress.
pub const PLATEAU_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub lr_drop_factor: f64,
    /// Extra epochs granted after a drop, as a fraction of epochs completed.
    pub extension_ratio: f64,
    pub max_lr_drops: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Fixed per-epoch learning rates. When set, training runs exactly
    /// these epochs with no validation and no plateau logic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_schedule: Option<Vec<f64>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 60,
            plateau_patience: 5,
            lr_drop_factor: 10.0,
            extension_ratio: 1.0 / 3.0,
            max_lr_drops: 2,
            adam: AdamConfig::default(),
            seed: 0,
            lr_schedule: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.plateau_patience > 0
            && self.extension_ratio > 0.0
            && self.adam.epsilon > 0.0;
        if !positive {
            return Err(Error::invalid("training settings must be positive"));
        }
        if self.lr_drop_factor <= 1.0 {
            return Err(Error::invalid("lr_drop_factor must exceed 1"));
        }
        if let Some(schedule) = &self.lr_schedule {
            if schedule.is_empty() || !schedule.iter().all(|lr| *lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid("lr_schedule needs at least one positive rate"));
            }
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Inputs with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} inputs for {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        Ok(Dataset { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when training follows a fixed schedule.
    pub val_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch indices (0-based) after which the learning rate was dropped.
    pub lr_drops: Vec<usize>,
}

impl TrainLog {
    /// Learning rate of every completed epoch, for replaying the run.
    pub fn schedule(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.learning_rate).collect()
    }
}

/// What a training run optimises.
///
/// Rows index into [`Objective::inputs`]; the loop picks which rows form
/// each minibatch and hands the network output for those rows back to the
/// objective.
pub trait Objective {
    fn inputs(&self) -> ArrayView2<'_, f64>;

    /// Rows visited during `epoch`, before shuffling.
    fn epoch_rows(&self, _epoch: usize) -> Vec<usize> {
        (0..self.inputs().nrows()).collect()
    }

    /// Mean loss over `rows` and its gradient with respect to `output`.
    fn loss_grad(
        &self,
        output: ArrayView2<f64>,
        rows: &[usize],
        rng: &mut dyn RngCore,
    ) -> (f64, Array2<f64>);

    /// Loss used for plateau detection; the model is in eval mode.
    fn validation_loss(&self, model: &MlpModel) -> Result<f64>;
}

/// Plain classification: softmax cross-entropy on the training labels,
/// clipped NLL on the validation set.
pub struct CrossEntropy<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
}

impl Objective for CrossEntropy<'_> {
    fn inputs(&self) -> ArrayView2<'_, f64> {
        self.train.inputs.view()
    }

    fn loss_grad(
        &self,
        output: ArrayView2<f64>,
        rows: &[usize],
        _rng: &mut dyn RngCore,
    ) -> (f64, Array2<f64>) {
        let labels: Vec<usize> = rows.iter().map(|&i| self.train.labels[i]).collect();
        softmax_cross_entropy(output, &labels)
    }

    fn validation_loss(&self, model: &MlpModel) -> Result<f64> {
        Ok(clipped_nll(model.logits(self.val.inputs.view())?.view(), &self.val.labels))
    }
}

fn minibatches(rows: Vec<usize>, batch_size: usize, need_two: bool) -> Result<Vec<Vec<usize>>> {
    let mut batches: Vec<Vec<usize>> = rows.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if need_two && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("checked non-empty");
        match batches.last_mut() {
            Some(prev) => prev.extend(tail),
            None => {
                return Err(Error::invalid(
                    "batchnorm training needs at least two rows per epoch",
                ))
            }
        }
    }
    Ok(batches)
}

/// Trains `model` on `objective` with Adam and the plateau schedule.
///
/// When validation loss fails to improve by more than
/// [`PLATEAU_TOLERANCE`] for `plateau_patience` epochs, the learning rate is
/// divided by `lr_drop_factor` and training runs for
/// `ceil(extension_ratio * completed)` further epochs, replacing the
/// original budget. At most `max_lr_drops` drops happen; otherwise training
/// stops after `max_epochs`. With `lr_schedule` set, the schedule is
/// replayed as given instead. The model is left in eval mode.
pub fn fit(model: &mut MlpModel, objective: &dyn Objective, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    let inputs = objective.inputs();
    if inputs.nrows() == 0 {
        return Err(Error::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.gradient_shapes());
    let schedule = cfg.lr_schedule.as_deref();
    let mut lr = cfg.learning_rate;
    let mut end = schedule.map_or(cfg.max_epochs, <[f64]>::len);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut log = TrainLog::default();
    let need_two = model.config().use_batchnorm;

    let mut epoch = 0;
    while epoch < end {
        if let Some(rates) = schedule {
            lr = rates[epoch];
        }
        model.set_mode(Mode::Train);
        let mut rows = objective.epoch_rows(epoch);
        rows.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for batch in minibatches(rows, cfg.batch_size, need_two)? {
            let x = inputs.select(Axis(0), &batch);
            let fwd = model.forward(x.view(), &mut rng)?;
            let (loss, d_out) = objective.loss_grad(fwd.output.view(), &batch, &mut rng);
            let grads = model.backward(&fwd, d_out.view());
            adam_step(model.parameters_mut(), grads.slices(), &mut state, lr, &cfg.adam);
            total += loss * batch.len() as f64;
            seen += batch.len();
        }
        model.set_mode(Mode::Eval);
        let val_loss = match schedule {
            Some(_) => None,
            None => Some(objective.validation_loss(model)?),
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / seen as f64,
            val_loss,
            learning_rate: lr,
        });
        epoch += 1;
        let Some(val_loss) = val_loss else {
            continue;
        };

        if val_loss < best - PLATEAU_TOLERANCE {
            best = val_loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.plateau_patience && log.lr_drops.len() < cfg.max_lr_drops {
            lr /= cfg.lr_drop_factor;
            log.lr_drops.push(epoch - 1);
            end = epoch + (cfg.extension_ratio * epoch as f64).ceil() as usize;
            stale = 0;
        }
    }
    model.set_mode(Mode::Eval);
    Ok(log)
}

/// Trains a classifier with softmax cross-entropy. `val` may be empty when
/// a fixed schedule is given.
pub fn train(
    model: &mut MlpModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if val.is_empty() && cfg.lr_schedule.is_none() {
        return Err(Error::Empty("validation set"));
    }
    fit(model, &CrossEntropy { train, val }, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remainder_of_one_joins_previous_batch() {
        let b = minibatches((0..9).collect(), 4, true).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 5]);
        let b = minibatches((0..9).collect(), 4, false).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 1]);
        assert!(minibatches(vec![0], 4, true).is_err());
    }
}
