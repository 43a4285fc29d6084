use ndarray::{Array2, ArrayView2};

use crate::math::softmax_into;
use crate::metrics::NLL_CLIP;

/// Mean softmax cross-entropy over the rows of `logits` and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: ArrayView2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), labels.len(), "one label per row");
    let n = logits.nrows() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for ((row, mut g), &y) in logits.rows().into_iter().zip(grad.rows_mut()).zip(labels) {
        let z = row.to_vec();
        let max = crate::math::max_value(&z);
        let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        loss += lse - z[y];
        let mut p = vec![0.0; z.len()];
        softmax_into(&z, 1.0, &mut p);
        for (k, gk) in g.iter_mut().enumerate() {
            *gk = (p[k] - if k == y { 1.0 } else { 0.0 }) / n;
        }
    }
    (loss / n, grad)
}

/// Clipped NLL of the softmax of `logits`, matching the evaluation metric.
pub(crate) fn clipped_nll(logits: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let mut p = vec![0.0; logits.ncols()];
    let mut total = 0.0;
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        softmax_into(&row.to_vec(), 1.0, &mut p);
        total -= p[y].clamp(NLL_CLIP.0, NLL_CLIP.1).ln();
    }
    total / labels.len() as f64
}
