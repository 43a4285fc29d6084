//! Deterministic inputs shared by the benchmarks.

use confcal_core::{GroupTag, MlpConfig, MlpModel, PredictionRecord, PredictionSet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Labelled validation predictions with uniform random logits.
pub fn predictions(n: usize, classes: usize, seed: u64) -> PredictionSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| PredictionRecord {
            id: i.to_string(),
            logits: (0..classes).map(|_| rng.random_range(-4.0..4.0)).collect(),
            label: Some(rng.random_range(0..classes)),
            group: GroupTag::Val,
            novelty: None,
        })
        .collect();
    PredictionSet::new(classes, records).expect("valid synthetic predictions")
}

/// A toy-sized network and a batch of 2-d inputs.
pub fn network(width: usize, batch: usize, seed: u64) -> (MlpModel, Array2<f64>) {
    let model = MlpModel::init(MlpConfig::toy(width), seed).expect("valid toy config");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = Array2::from_shape_fn((batch, 2), |_| rng.random_range(-3.0..3.0));
    (model, x)
}
