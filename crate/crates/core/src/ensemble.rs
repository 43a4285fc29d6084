//! Ensemble averaging, optionally with per-member or shared calibration.

use std::collections::HashSet;

use crate::calibration::{fit_temperature, minimize_temperature, Calibrator};
use crate::error::{Error, Result};
use crate::metrics::NLL_CLIP;
use crate::predictions::{PredictionSet, ProbabilitySet};

/// Ensemble size used throughout the toy benchmark.
pub const DEFAULT_MEMBERS: usize = 10;

/// Elementwise mean of aligned member probabilities.
pub fn combine(members: &[ProbabilitySet]) -> Result<ProbabilitySet> {
    let first = members.first().ok_or(Error::Empty("ensemble members"))?;
    for (j, m) in members.iter().enumerate().skip(1) {
        if m.rows().dim() != first.rows().dim() {
            return Err(Error::Misaligned(format!(
                "member {j} has shape {:?}, expected {:?}",
                m.rows().dim(),
                first.rows().dim()
            )));
        }
        if m.ids() != first.ids() {
            return Err(Error::Misaligned(format!("member {j} is not aligned by id")));
        }
    }
    let mut sum = first.rows().clone();
    for m in &members[1..] {
        sum += m.rows();
    }
    sum /= members.len() as f64;
    ProbabilitySet::new(
        first.ids().to_vec(),
        sum,
        first.labels().to_vec(),
        first.groups().to_vec(),
    )
}

/// Fits a temperature per member on its own validation predictions, applies
/// it to that member's predictions and averages the result.
///
/// Each pair is `(predictions, validation predictions)`. The fitted
/// calibrators are returned alongside the combined probabilities.
pub fn ensemble_of_calibrated(
    members: &[(PredictionSet, PredictionSet)],
) -> Result<(ProbabilitySet, Vec<Calibrator>)> {
    let calibrators = members
        .iter()
        .map(|(_, val)| fit_temperature(val))
        .collect::<Result<Vec<_>>>()?;
    let probs = members
        .iter()
        .zip(&calibrators)
        .map(|((pred, _), cal)| cal.apply(pred))
        .collect::<Result<Vec<_>>>()?;
    Ok((combine(&probs)?, calibrators))
}

/// One temperature, shared by every member, minimising the NLL of the
/// averaged calibrated prediction on the rows whose id is in `val_ids`.
pub fn fit_shared_ensemble_temperature(
    members: &[PredictionSet],
    val_ids: &[String],
) -> Result<Calibrator> {
    if members.is_empty() {
        return Err(Error::Empty("ensemble members"));
    }
    let wanted: HashSet<&str> = val_ids.iter().map(String::as_str).collect();
    let vals: Vec<PredictionSet> = members
        .iter()
        .map(|m| m.filter(|r| wanted.contains(r.id.as_str())))
        .collect();
    let first = &vals[0];
    if first.is_empty() {
        return Err(Error::Empty("validation rows"));
    }
    for v in &vals[1..] {
        if v.ids() != first.ids() {
            return Err(Error::Misaligned("members are not aligned by id".into()));
        }
    }
    let labels = first
        .records()
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::Unlabeled(r.id.clone())))
        .collect::<Result<Vec<_>>>()?;

    let c = first.class_count();
    let mut buf = vec![0.0; c];
    let mut mean = vec![0.0; c];
    let objective = |t: f64| {
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            mean.iter_mut().for_each(|v| *v = 0.0);
            for v in &vals {
                crate::math::softmax_into(&v.records()[i].logits, t, &mut buf);
                for (m, p) in mean.iter_mut().zip(&buf) {
                    *m += p;
                }
            }
            let p = mean[y] / vals.len() as f64;
            total -= p.clamp(NLL_CLIP.0, NLL_CLIP.1).ln();
        }
        total / labels.len() as f64
    };
    let (t, _) = minimize_temperature(objective);
    Calibrator::fixed(t)
}
