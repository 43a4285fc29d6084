//! Distilling an ensemble into a single network.
//!
//! The student minimises a temperature-scaled cross-entropy against the
//! teacher's softened probabilities plus a weighted hard-label
//! cross-entropy. G-distillation adds unlabeled rows drawn from a broader
//! distribution, which contribute only the soft-target term.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_temperature, Calibrator};
use crate::error::{Error, Result};
use crate::math::{derive_seed, softmax_into};
use crate::mlp::{fit, Dataset, MlpModel, Objective, TrainConfig, TrainLog};
use crate::predictions::PredictionSet;

/// Stream label for the per-epoch unlabeled subsample, kept apart from the
/// minibatch shuffling stream.
const UNSUP_STREAM: u64 = 0x6D15_7111;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub lambda_cls: f64,
    pub distill_temperature: f64,
    /// Unlabeled rows per epoch, as a fraction of the labeled set size.
    pub unsup_ratio: f64,
    pub train: TrainConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda_cls: 0.5,
            distill_temperature: 2.0,
            unsup_ratio: 0.25,
            train: TrainConfig::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cls >= 0.0) || !(self.distill_temperature > 0.0) || !(self.unsup_ratio >= 0.0) {
            return Err(Error::invalid(
                "need lambda_cls >= 0, distill_temperature > 0 and unsup_ratio >= 0",
            ));
        }
        self.train.validate()
    }

    /// Unlabeled rows drawn per epoch for a labeled set of `labeled` rows.
    pub fn unsup_per_epoch(&self, labeled: usize) -> usize {
        (self.unsup_ratio * labeled as f64).round() as usize
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: DistillConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `p^(1/t)` renormalised.
pub fn soften(probs: &[f64], t: f64) -> Vec<f64> {
    let raised: Vec<f64> = probs.iter().map(|p| p.powf(1.0 / t)).collect();
    let sum: f64 = raised.iter().sum();
    raised.into_iter().map(|v| v / sum).collect()
}

fn soften_rows(teacher: ArrayView2<f64>, t: f64) -> Array2<f64> {
    let mut out = teacher.to_owned();
    for mut row in out.rows_mut() {
        let soft = soften(&row.to_vec(), t);
        row.iter_mut().zip(soft).for_each(|(o, v)| *o = v);
    }
    out
}

/// Loss over rows whose targets are already softened, with its gradient
/// with respect to the student logits.
fn loss_grad_softened(
    logits: ArrayView2<f64>,
    soft_targets: ArrayView2<f64>,
    labels: &[Option<usize>],
    lambda: f64,
    t: f64,
) -> (f64, Array2<f64>) {
    let (n, c) = logits.dim();
    let mut grad = Array2::zeros((n, c));
    let mut loss = 0.0;
    let mut ps = vec![0.0; c];
    let mut p1 = vec![0.0; c];
    for i in 0..n {
        let z = logits.row(i).to_vec();
        softmax_into(&z, t, &mut ps);
        let log_ps = crate::math::log_softmax(&z, t);
        for k in 0..c {
            let q = soft_targets[[i, k]];
            if q > 0.0 {
                loss -= q * log_ps[k];
            }
            grad[[i, k]] = (ps[k] - q) / t;
        }
        if let Some(y) = labels[i] {
            if lambda > 0.0 {
                softmax_into(&z, 1.0, &mut p1);
                loss -= lambda * crate::math::log_softmax(&z, 1.0)[y];
                for k in 0..c {
                    grad[[i, k]] += lambda * (p1[k] - if k == y { 1.0 } else { 0.0 });
                }
            }
        }
    }
    grad /= n as f64;
    (loss / n as f64, grad)
}

fn check_rows(logits: ArrayView2<f64>, teacher: ArrayView2<f64>, labels: &[Option<usize>]) -> Result<()> {
    if logits.dim() != teacher.dim() || labels.len() != logits.nrows() {
        return Err(Error::shape(format!(
            "student {:?}, teacher {:?}, {} labels",
            logits.dim(),
            teacher.dim(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mean over rows of `CE(soften(teacher, T_d), softmax(z / T_d))` plus
/// `lambda_cls · CE(y, softmax(z))` on rows that carry a label.
pub fn distill_loss(
    student_logits: ArrayView2<f64>,
    teacher_probs: ArrayView2<f64>,
    labels: &[Option<usize>],
    config: &DistillConfig,
) -> Result<f64> {
    Ok(distill_loss_grad(student_logits, teacher_probs, labels, config)?.0)
}

/// [`distill_loss`] and its gradient with respect to the student logits.
pub fn distill_loss_grad(
    student_logits: ArrayView2<f64>,
    teacher_probs: ArrayView2<f64>,
    labels: &[Option<usize>],
    config: &DistillConfig,
) -> Result<(f64, Array2<f64>)> {
    check_rows(student_logits, teacher_probs, labels)?;
    let t = config.distill_temperature;
    let soft = soften_rows(teacher_probs, t);
    Ok(loss_grad_softened(student_logits, soft.view(), labels, config.lambda_cls, t))
}

/// Labeled rows first, then the unlabeled pool; targets are softened once.
struct DistillObjective {
    inputs: Array2<f64>,
    targets: Array2<f64>,
    labels: Vec<Option<usize>>,
    labeled: usize,
    unsup_per_epoch: usize,
    seed: u64,
    lambda: f64,
    t: f64,
    val_inputs: Array2<f64>,
    val_targets: Array2<f64>,
    val_labels: Vec<Option<usize>>,
}

impl Objective for DistillObjective {
    fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    fn epoch_rows(&self, epoch: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = (0..self.labeled).collect();
        let pool = self.inputs.nrows() - self.labeled;
        if self.unsup_per_epoch > 0 && pool > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                derive_seed(self.seed, UNSUP_STREAM),
                epoch as u64,
            ));
            let take = self.unsup_per_epoch.min(pool);
            rows.extend(
                rand::seq::index::sample(&mut rng, pool, take)
                    .into_iter()
                    .map(|i| self.labeled + i),
            );
        }
        rows
    }

    fn loss_grad(
        &self,
        output: ArrayView2<f64>,
        rows: &[usize],
        _rng: &mut dyn RngCore,
    ) -> (f64, Array2<f64>) {
        let targets = self.targets.select(Axis(0), rows);
        let labels: Vec<Option<usize>> = rows.iter().map(|&i| self.labels[i]).collect();
        loss_grad_softened(output, targets.view(), &labels, self.lambda, self.t)
    }

    fn validation_loss(&self, model: &MlpModel) -> Result<f64> {
        let logits = model.logits(self.val_inputs.view())?;
        Ok(loss_grad_softened(
            logits.view(),
            self.val_targets.view(),
            &self.val_labels,
            self.lambda,
            self.t,
        )
        .0)
    }
}

/// Scores `inputs` with the teacher, checking the result is a probability
/// matrix of the right shape.
fn teacher_targets(
    teacher: &dyn Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    inputs: ArrayView2<f64>,
    classes: usize,
    t: f64,
) -> Result<Array2<f64>> {
    if inputs.nrows() == 0 {
        return Ok(Array2::zeros((0, classes)));
    }
    let probs = teacher(inputs)?;
    if probs.dim() != (inputs.nrows(), classes) {
        return Err(Error::shape(format!(
            "teacher returned {:?}, expected ({}, {classes})",
            probs.dim(),
            inputs.nrows()
        )));
    }
    Ok(soften_rows(probs.view(), t))
}

/// Trains `student` against a frozen teacher on the labeled set.
///
/// `teacher` maps an input batch to class probabilities; it is evaluated
/// once per input before training starts.
pub fn train_distilled(
    student: &mut MlpModel,
    teacher: &dyn Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    train: &Dataset,
    val: &Dataset,
    config: &DistillConfig,
) -> Result<TrainLog> {
    let empty = Array2::zeros((0, train.inputs.ncols()));
    train_g_distilled(student, teacher, train, val, empty.view(), config)
}

/// As [`train_distilled`], plus a fresh subsample of `unsup` rows every
/// epoch that contributes only the soft-target term.
///
/// The subsample has `round(unsup_ratio · |train|)` rows and is drawn from
/// its own seeded stream, so `unsup_ratio = 0` reproduces plain
/// distillation exactly.
pub fn train_g_distilled(
    student: &mut MlpModel,
    teacher: &dyn Fn(ArrayView2<f64>) -> Result<Array2<f64>>,
    train: &Dataset,
    val: &Dataset,
    unsup: ArrayView2<f64>,
    config: &DistillConfig,
) -> Result<TrainLog> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() && config.train.lr_schedule.is_none() {
        return Err(Error::Empty("validation set"));
    }
    if unsup.ncols() != train.inputs.ncols() {
        return Err(Error::shape("unlabeled inputs have the wrong width"));
    }
    let c = student.config().class_count;
    let t = config.distill_temperature;
    let inputs = concatenate(Axis(0), &[train.inputs.view(), unsup])
        .map_err(|e| Error::shape(e.to_string()))?;
    let targets = teacher_targets(teacher, inputs.view(), c, t)?;
    let mut labels: Vec<Option<usize>> = train.labels.iter().map(|&y| Some(y)).collect();
    labels.resize(inputs.nrows(), None);
    let objective = DistillObjective {
        targets,
        labels,
        labeled: train.len(),
        unsup_per_epoch: config.unsup_per_epoch(train.len()),
        seed: config.train.seed,
        lambda: config.lambda_cls,
        t,
        val_targets: teacher_targets(teacher, val.inputs.view(), c, t)?,
        val_labels: val.labels.iter().map(|&y| Some(y)).collect(),
        val_inputs: val.inputs.clone(),
        inputs,
    };
    fit(student, &objective, &config.train)
}

/// Temperature for a distilled student: fitted on validation, but never
/// below 1. The flag reports whether the floor was applied.
pub fn fit_student_temperature(val: &PredictionSet) -> Result<(Calibrator, bool)> {
    match fit_temperature(val)? {
        Calibrator::Fixed { t } if t < 1.0 => Ok((Calibrator::fixed(1.0)?, true)),
        cal => Ok((cal, false)),
    }
}
