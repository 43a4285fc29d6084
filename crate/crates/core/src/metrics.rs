//! Prediction-quality metrics: NLL, Brier error, label error, ECE and E99.
//!
//! All metrics are "lower is better" and operate on the confidence a model
//! assigns to the true label (`nll`, `brier`) or on its most likely label
//! (`label_error`, `ece`, `e99`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, max_value};
use crate::predictions::{GroupTag, ProbabilitySet};

/// Probabilities are clipped to this range before taking logs in [`nll`].
pub const NLL_CLIP: (f64, f64) = (0.001, 0.999);
pub const DEFAULT_ECE_BINS: usize = 10;
pub const DEFAULT_E99_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nll: f64,
    pub brier: f64,
    pub label_error: f64,
    pub ece: f64,
    /// Error rate among predictions at or above 99% confidence; `None` when
    /// no prediction qualifies.
    pub e99: Option<f64>,
    /// Counts default to 0 so that published tables without them load.
    #[serde(default)]
    pub e99_count: usize,
    #[serde(default)]
    pub n: usize,
}

/// One report per split, keyed by group tag.
pub type GroupReports = BTreeMap<GroupTag, MetricsReport>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EceBin {
    pub count: usize,
    pub mean_confidence: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EceBreakdown {
    pub bins: Vec<EceBin>,
}

/// Labels of every row, failing on empty or unlabeled input.
fn true_labels(probs: &ProbabilitySet) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::Empty("probability set"));
    }
    probs
        .labels()
        .iter()
        .zip(probs.ids())
        .map(|(y, id)| y.ok_or_else(|| Error::Unlabeled(id.clone())))
        .collect()
}

/// Mean negative log of the (clipped) probability assigned to the true label.
pub fn nll(probs: &ProbabilitySet) -> Result<f64> {
    let labels = true_labels(probs)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probs.row(i)[y].clamp(NLL_CLIP.0, NLL_CLIP.1).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Root mean squared shortfall of the true-label confidence from 1.
pub fn brier(probs: &ProbabilitySet) -> Result<f64> {
    let labels = true_labels(probs)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| (1.0 - probs.row(i)[y]).powi(2))
        .sum();
    Ok((total / labels.len() as f64).sqrt())
}

pub fn label_error(probs: &ProbabilitySet) -> Result<f64> {
    let labels = true_labels(probs)?;
    let wrong = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(probs.row(i)) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Expected calibration error over equal-count confidence bins.
///
/// Rows are stably sorted by max-probability and cut into `bins` contiguous
/// groups whose sizes differ by at most one; the first `n % bins` groups take
/// the extra element. Rows with identical confidence always share the bin of
/// the first of them, so a bin may end up larger or empty. Empty bins
/// contribute nothing.
pub fn ece(probs: &ProbabilitySet, bins: usize) -> Result<(f64, EceBreakdown)> {
    if bins == 0 {
        return Err(Error::invalid("ECE needs at least one bin"));
    }
    let labels = true_labels(probs)?;
    let n = labels.len();
    let mut scored: Vec<(f64, bool)> = (0..n)
        .map(|i| {
            let row = probs.row(i);
            (max_value(row), argmax(row) == labels[i])
        })
        .collect();
    // sort_by is stable, so ties keep their original order.
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    let base = n / bins;
    let extra = n % bins;
    let mut bin_of = Vec::with_capacity(n);
    for j in 0..bins {
        bin_of.extend(std::iter::repeat_n(j, base + usize::from(j < extra)));
    }
    for i in 1..n {
        if scored[i].0 == scored[i - 1].0 {
            bin_of[i] = bin_of[i - 1];
        }
    }
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0usize; bins];
    for (&(c, ok), &j) in scored.iter().zip(&bin_of) {
        count[j] += 1;
        conf_sum[j] += c;
        correct[j] += usize::from(ok);
    }
    let mut out = Vec::with_capacity(bins);
    let mut total = 0.0;
    for j in 0..bins {
        if count[j] == 0 {
            out.push(EceBin {
                count: 0,
                mean_confidence: 0.0,
                accuracy: 0.0,
            });
            continue;
        }
        let size = count[j] as f64;
        let conf = conf_sum[j] / size;
        let acc = correct[j] as f64 / size;
        total += size / n as f64 * (acc - conf).abs();
        out.push(EceBin {
            count: count[j],
            mean_confidence: conf,
            accuracy: acc,
        });
    }
    Ok((total, EceBreakdown { bins: out }))
}

/// Error rate among rows whose max-probability is at least `threshold`,
/// together with how many rows qualified.
pub fn e99(probs: &ProbabilitySet, threshold: f64) -> Result<(Option<f64>, usize)> {
    if probs.is_empty() {
        return Ok((None, 0));
    }
    let labels = true_labels(probs)?;
    let mut count = 0;
    let mut wrong = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row = probs.row(i);
        if max_value(row) >= threshold {
            count += 1;
            if argmax(row) != y {
                wrong += 1;
            }
        }
    }
    let rate = (count > 0).then(|| wrong as f64 / count as f64);
    Ok((rate, count))
}

pub fn evaluate(probs: &ProbabilitySet) -> Result<MetricsReport> {
    let (e99, e99_count) = e99(probs, DEFAULT_E99_THRESHOLD)?;
    Ok(MetricsReport {
        nll: nll(probs)?,
        brier: brier(probs)?,
        label_error: label_error(probs)?,
        ece: ece(probs, DEFAULT_ECE_BINS)?.0,
        e99,
        e99_count,
        n: probs.len(),
    })
}

/// Evaluates each labeled group present in `probs` separately.
pub fn evaluate_by_group(probs: &ProbabilitySet) -> Result<GroupReports> {
    probs
        .present_groups()
        .into_iter()
        .filter(|g| *g != GroupTag::Unsup)
        .map(|g| Ok((g, evaluate(&probs.filter_by_group(g))?)))
        .collect()
}

/// Relative improvement of `method` over `baseline`, in percent.
///
/// A drop from 0.10 to 0.09 is a 10% reduction; a method worse than the
/// baseline yields a negative value.
pub fn percent_reduction(baseline: f64, method: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::invalid(format!(
            "percent reduction needs a positive baseline, got {baseline}"
        )));
    }
    Ok(100.0 * (baseline - method) / baseline)
}
