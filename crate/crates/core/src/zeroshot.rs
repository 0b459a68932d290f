//! Cosine-similarity classification against class text features.

use ndarray::{Array2, ArrayView2, Axis};

use crate::config::LogitScale;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Logits, probabilities and argmax predictions for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionBatch {
    /// Pre-softmax scores, `B x C`.
    pub raw: Array2<f64>,
    /// Row-stochastic probabilities, `B x C`.
    pub probs: Array2<f64>,
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
}

impl PredictionBatch {
    pub fn from_logits(raw: Array2<f64>) -> Result<Self> {
        let probs = softmax_rows(raw.view())?;
        let (labels, confidence) = predict(probs.view());
        Ok(Self {
            raw,
            probs,
            labels,
            confidence,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// `scale * feats . text^T`; with unit rows each entry is a scaled cosine.
pub fn similarity_logits(
    feats: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    scale: LogitScale,
) -> Result<Array2<f64>> {
    feats.check_same_dim(text, "image vs text features")?;
    Ok(scaled_dot(feats.data(), text.data(), scale.get()))
}

pub(crate) fn scaled_dot(a: ArrayView2<f64>, b: ArrayView2<f64>, scale: f64) -> Array2<f64> {
    let mut out = a.dot(&b.t());
    if scale != 1.0 {
        out.mapv_inplace(|v| v * scale);
    }
    out
}

/// Row softmax with the row maximum subtracted before exponentiation.
pub fn softmax_rows(raw: ArrayView2<f64>) -> Result<Array2<f64>> {
    if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite logit {v}")));
    }
    let mut out = raw.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

/// Index of the first maximal entry.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Per-row argmax and maximum; ties go to the lowest index.
pub fn predict(probs: ArrayView2<f64>) -> (Vec<usize>, Vec<f64>) {
    probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .unzip()
}

pub fn zero_shot_classify(
    feats: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    scale: LogitScale,
) -> Result<PredictionBatch> {
    PredictionBatch::from_logits(similarity_logits(feats, text, scale)?)
}
