//! 2D toy benchmark: familiar/novel data generation and the full method
//! comparison over seeds.

mod experiment;
mod generator;

use ndarray::ArrayView2;

use crate::error::Result;
use crate::math::{max_value, softmax_into};
use crate::mlp::MlpModel;

pub use experiment::{
    audit, parse_roster, run_experiment, Heatmap, Method, MetricSummary, SeedResult, Stat, SweepCurve,
    SweepRange, ToyConfig, ToyRun,
};
pub use generator::{generate, FamiliarRegion, Generator, ToyData, ToySpec, GRID_MARGIN, MIN_ACCEPTANCE};

/// `1 − max softmax(logits / score_temperature)` per row; higher means
/// more novel.
pub fn novelty_score(model: &MlpModel, inputs: ArrayView2<f64>, score_temperature: f64) -> Result<Vec<f64>> {
    Ok(novelty_from_logits(model.logits(inputs)?.view(), score_temperature))
}

pub fn novelty_from_logits(logits: ArrayView2<f64>, score_temperature: f64) -> Vec<f64> {
    let mut buf = vec![0.0; logits.ncols()];
    logits
        .rows()
        .into_iter()
        .map(|z| {
            softmax_into(&z.to_vec(), score_temperature, &mut buf);
            1.0 - max_value(&buf)
        })
        .collect()
}
