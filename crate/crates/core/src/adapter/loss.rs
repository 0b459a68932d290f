use ndarray::{Array1, ArrayView2, Axis};

use crate::msm::PROB_EPS;

/// Mean of `-ln p[i, pseudo[i]]` over rows whose maximum probability is at
/// least `theta`. Returns the loss and the row mask; with no passing row the
/// loss is 0.
pub fn ce_masked_loss(probs: ArrayView2<f64>, pseudo: &[usize], theta: f64) -> (f64, Vec<bool>) {
    debug_assert_eq!(probs.nrows(), pseudo.len());
    let mask: Vec<bool> = probs
        .rows()
        .into_iter()
        .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= theta)
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &m) in mask.iter().enumerate() {
        if m {
            sum -= probs[[i, pseudo[i]]].max(PROB_EPS).ln();
            count += 1;
        }
    }
    let loss = if count == 0 { 0.0 } else { sum / count as f64 };
    (loss, mask)
}

/// Batch marginal `h`, the column mean of `probs`.
pub(crate) fn marginal(probs: ArrayView2<f64>) -> Array1<f64> {
    probs
        .mean_axis(Axis(0))
        .expect("marginal of an empty batch")
}

/// `ln C - H(h)` where `h` is the batch-mean class distribution; `h` is
/// clamped to [`PROB_EPS`] inside the log. Zero for a uniform marginal,
/// `ln C` for a one-hot one.
pub fn marginal_entropy_loss(probs: ArrayView2<f64>) -> f64 {
    let c = probs.ncols() as f64;
    let h = marginal(probs);
    let neg_entropy: f64 = h.iter().map(|&hc| hc * hc.max(PROB_EPS).ln()).sum();
    c.ln() + neg_entropy
}
