//! Training-free inference over a feature cache.
//!
//! Each cache entry is weighted by a feature-level score (cosine to the test
//! feature) and a semantic-level score (derived from the KL divergence between
//! the test and prototype class distributions). The weighted one-hot labels
//! are summed into per-class scores and added to the zero-shot probabilities.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};

use crate::cache::CacheModel;
use crate::config::{RunConfig, SimilarityMeasure};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::zeroshot::{scaled_dot, softmax_rows, PredictionBatch};

/// Probabilities are clamped to at least this before taking logs.
pub const PROB_EPS: f64 = 1e-12;

/// Allowed deviation of a probability row sum from 1.
pub const STOCHASTIC_TOL: f64 = 1e-4;

/// Per-(test row, cache entry) weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityWeights {
    pub w_cont: Array2<f64>,
    pub w_sem: Array2<f64>,
    pub w_fsm: Array2<f64>,
}

/// Intermediate and final scores of one inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TfupOutput {
    /// Zero-shot probabilities of the test rows.
    pub logits_test: Array2<f64>,
    pub weights: SimilarityWeights,
    /// Cache-based class scores.
    pub logits_sim: Array2<f64>,
    /// `logits_test + gamma * logits_sim`.
    pub logits_all: Array2<f64>,
}

/// Raw cosine between each test row and each prototype (no logit scale).
pub fn feature_similarity(f_test: &EmbeddingMatrix, proto: &EmbeddingMatrix) -> Result<Array2<f64>> {
    f_test.check_same_dim(proto, "test vs cache features")?;
    Ok(scaled_dot(f_test.data(), proto.data(), 1.0))
}

fn check_stochastic(p: ArrayView1<f64>, what: &str) -> Result<()> {
    let sum: f64 = p.sum();
    if !(sum - 1.0).abs().le(&STOCHASTIC_TOL) || p.iter().any(|v| *v < 0.0) {
        return Err(Error::Data(format!(
            "{what} is not a probability vector (sum {sum})"
        )));
    }
    Ok(())
}

/// `sum_i p_i ln(p_i / q_i)` with both arguments clamped to [`PROB_EPS`].
///
/// The clamp can push the sum a hair below zero; the result is floored at 0.
pub fn kl_divergence(p: ArrayView1<f64>, q: ArrayView1<f64>) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "KL arguments of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    check_stochastic(p, "KL first argument")?;
    check_stochastic(q, "KL second argument")?;
    Ok(kl_unchecked(p, q))
}

fn kl_unchecked(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| {
            let pi = pi.max(PROB_EPS);
            pi * (pi / qi.max(PROB_EPS)).ln()
        })
        .sum();
    kl.max(0.0)
}

/// `W_sem[i, p] = 1 - softmax_p(KL(logits_test[i], logits_proto[p]))`, the
/// softmax running over all cache entries.
///
/// A single-entry cache would get weight 0 from the formula; it is given
/// weight 1 instead so the entry still participates.
pub fn semantic_similarity(
    logits_test: ArrayView2<f64>,
    logits_proto: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let p = logits_proto.nrows();
    if p == 0 {
        return Err(Error::EmptyCache);
    }
    if logits_test.ncols() != logits_proto.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "test distributions over {} classes, cache over {}",
            logits_test.ncols(),
            logits_proto.ncols()
        )));
    }
    for r in logits_test.rows() {
        check_stochastic(r, "test distribution")?;
    }
    for r in logits_proto.rows() {
        check_stochastic(r, "prototype distribution")?;
    }
    if p == 1 {
        log::warn!("single-entry cache: semantic weight fixed at 1");
        return Ok(Array2::ones((logits_test.nrows(), 1)));
    }
    let mut div = Array2::zeros((logits_test.nrows(), p));
    for (i, t) in logits_test.rows().into_iter().enumerate() {
        for (j, q) in logits_proto.rows().into_iter().enumerate() {
            div[[i, j]] = kl_unchecked(t, q);
        }
    }
    let mut w = softmax_rows(div.view())?;
    w.mapv_inplace(|v| 1.0 - v);
    Ok(w)
}

/// Hadamard product of the two weight matrices.
pub fn multi_level(w_cont: ArrayView2<f64>, w_sem: ArrayView2<f64>) -> Result<Array2<f64>> {
    if w_cont.dim() != w_sem.dim() {
        return Err(Error::DimensionMismatch(format!(
            "weight shapes {:?} and {:?}",
            w_cont.dim(),
            w_sem.dim()
        )));
    }
    Ok(&w_cont * &w_sem)
}

/// `w_fsm . proto_labels`: per class, the summed weight of its cache entries.
pub fn similarity_prediction(
    w_fsm: ArrayView2<f64>,
    proto_labels: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if w_fsm.ncols() != proto_labels.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights per row but {} cache labels",
            w_fsm.ncols(),
            proto_labels.nrows()
        )));
    }
    Ok(w_fsm.dot(&proto_labels))
}

/// `logits_test + gamma * logits_sim`.
pub fn fuse(
    logits_test: ArrayView2<f64>,
    logits_sim: ArrayView2<f64>,
    gamma: f64,
) -> Result<Array2<f64>> {
    if logits_test.dim() != logits_sim.dim() {
        return Err(Error::DimensionMismatch(format!(
            "fusing {:?} with {:?}",
            logits_test.dim(),
            logits_sim.dim()
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Config(format!("gamma must be >= 0, got {gamma}")));
    }
    let mut out = logits_test.to_owned();
    Zip::from(&mut out)
        .and(&logits_sim)
        .for_each(|o, &s| *o += gamma * s);
    Ok(out)
}

/// Cache-side scores for test features whose class distributions are already
/// known. Shared by the training-free path and the adapter+cache path.
pub(crate) fn cache_scores(
    f_test: &EmbeddingMatrix,
    logits_test: ArrayView2<f64>,
    proto_features: &EmbeddingMatrix,
    cache: &CacheModel,
    measure: SimilarityMeasure,
) -> Result<(SimilarityWeights, Array2<f64>)> {
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    let w_cont = feature_similarity(f_test, proto_features)?;
    let w_sem = semantic_similarity(logits_test, cache.probs.view())?;
    let w_fsm = match measure {
        SimilarityMeasure::Feature => w_cont.clone(),
        SimilarityMeasure::Semantic => w_sem.clone(),
        SimilarityMeasure::MultiLevel => multi_level(w_cont.view(), w_sem.view())?,
    };
    let logits_sim = similarity_prediction(w_fsm.view(), cache.labels.view())?;
    Ok((
        SimilarityWeights {
            w_cont,
            w_sem,
            w_fsm,
        },
        logits_sim,
    ))
}

fn check_cache(cache: &CacheModel, text: &EmbeddingMatrix, cfg: &RunConfig) -> Result<()> {
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    if cache.meta.num_classes != text.rows() {
        return Err(Error::DimensionMismatch(format!(
            "cache has {} classes, text features {}",
            cache.meta.num_classes,
            text.rows()
        )));
    }
    let (a, b) = (cache.meta.logit_scale.get(), cfg.logit_scale.get());
    // The cache file stores its scale as f32.
    if (a - b).abs() > 1e-6 * b {
        return Err(Error::Config(format!(
            "cache was built with logit scale {a}, run uses {b}"
        )));
    }
    Ok(())
}

/// All intermediate scores of the training-free pipeline.
pub fn tfup_scores(
    f_test: &EmbeddingMatrix,
    cache: &CacheModel,
    text: &EmbeddingMatrix,
    cfg: &RunConfig,
) -> Result<TfupOutput> {
    check_cache(cache, text, cfg)?;
    f_test.check_same_dim(text, "test vs text features")?;
    let logits_test = softmax_rows(
        scaled_dot(f_test.data(), text.data(), cfg.logit_scale.get()).view(),
    )?;
    let (weights, logits_sim) =
        cache_scores(f_test, logits_test.view(), &cache.features, cache, cfg.similarity)?;
    let logits_all = fuse(logits_test.view(), logits_sim.view(), cfg.gamma)?;
    Ok(TfupOutput {
        logits_test,
        weights,
        logits_sim,
        logits_all,
    })
}

/// Training-free classification; `probs` is the softmax of the fused scores.
pub fn tfup_classify(
    f_test: &EmbeddingMatrix,
    cache: &CacheModel,
    text: &EmbeddingMatrix,
    cfg: &RunConfig,
) -> Result<PredictionBatch> {
    let out = tfup_scores(f_test, cache, text, cfg)?;
    PredictionBatch::from_logits(out.logits_all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::build_cache;
    use crate::config::LogitScale;
    use crate::zeroshot::zero_shot_classify;
    use ndarray::array;

    #[test]
    fn feature_similarity_cases() {
        let t = EmbeddingMatrix::with_prefix(array![[0.6, 0.8], [1.0, 0.0]], "t").unwrap();
        let p = EmbeddingMatrix::with_prefix(array![[0.6, 0.8], [0.0, 1.0]], "p").unwrap();
        let w = feature_similarity(&t, &p).unwrap();
        assert!((w[[0, 0]] - 1.0).abs() < 1e-12);
        assert_eq!(w[[1, 1]], 0.0);
    }

    #[test]
    fn kl_cases() {
        let p = array![0.2, 0.3, 0.5];
        assert!(kl_divergence(p.view(), p.view()).unwrap().abs() < 1e-9);
        let kl = kl_divergence(array![1.0, 0.0].view(), array![0.5, 0.5].view()).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-9);
        assert!(kl_divergence(array![0.7, 0.7].view(), array![0.5, 0.5].view()).is_err());
    }

    #[test]
    fn kl_matches_summation() {
        let p = array![0.1, 0.6, 0.3];
        let q = array![0.25, 0.25, 0.5];
        let expected = 0.1 * (0.1f64 / 0.25).ln() + 0.6 * (0.6f64 / 0.25).ln() + 0.3 * (0.3f64 / 0.5).ln();
        assert!((kl_divergence(p.view(), q.view()).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn semantic_symmetric_and_monotone() {
        let test = array![[0.7, 0.3]];
        let same = array![[0.4, 0.6], [0.4, 0.6]];
        let w = semantic_similarity(test.view(), same.view()).unwrap();
        assert!((w[[0, 0]] - 0.5).abs() < 1e-12 && (w[[0, 1]] - 0.5).abs() < 1e-12);

        let mixed = array![[0.7, 0.3], [0.01, 0.99]];
        let w = semantic_similarity(test.view(), mixed.view()).unwrap();
        assert!(w[[0, 0]] > w[[0, 1]]);
    }

    #[test]
    fn semantic_edge_cases() {
        let test = array![[0.5, 0.5]];
        assert!(matches!(
            semantic_similarity(test.view(), Array2::zeros((0, 2)).view()),
            Err(Error::EmptyCache)
        ));
        let w = semantic_similarity(test.view(), array![[0.9, 0.1]].view()).unwrap();
        assert_eq!(w, array![[1.0]]);
    }

    #[test]
    fn fusion_pieces() {
        let cont = array![[0.3, -0.2], [0.5, 0.4]];
        assert_eq!(multi_level(cont.view(), Array2::ones((2, 2)).view()).unwrap(), cont);
        let z = multi_level(cont.view(), array![[0.0, 1.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!(z, array![[0.0, -0.2], [0.5, 0.0]]);
        assert!(multi_level(cont.view(), Array2::ones((1, 2)).view()).is_err());

        let labels = array![[0.0, 0.0, 1.0, 0.0]];
        let sim = similarity_prediction(array![[0.4]].view(), labels.view()).unwrap();
        assert_eq!(sim, array![[0.0, 0.0, 0.4, 0.0]]);
        let labels = array![[1.0, 0.0], [1.0, 0.0]];
        let sim = similarity_prediction(array![[0.3, 0.2]].view(), labels.view()).unwrap();
        assert!((sim[[0, 0]] - 0.5).abs() < 1e-15);

        let t = array![[0.2, 0.8]];
        let s = array![[1.0, 3.0]];
        assert_eq!(fuse(t.view(), s.view(), 0.0).unwrap(), t);
        assert_eq!(fuse(t.view(), Array2::zeros((1, 2)).view(), 1.0).unwrap(), t);
        assert_eq!(fuse(t.view(), s.view(), 1.0).unwrap(), array![[1.2, 3.8]]);
    }

    fn separable() -> (EmbeddingMatrix, EmbeddingMatrix, RunConfig) {
        let text = EmbeddingMatrix::with_prefix(Array2::eye(3), "t").unwrap();
        let train = EmbeddingMatrix::with_prefix(Array2::eye(3), "x").unwrap();
        let cfg = RunConfig {
            k: 1,
            n: 1,
            ..RunConfig::default()
        };
        (text, train, cfg)
    }

    #[test]
    fn separable_fixture_classifies() {
        let (text, train, cfg) = separable();
        let cache = build_cache(&train, &text, &cfg).unwrap();
        let pred = tfup_classify(&train, &cache, &text, &cfg).unwrap();
        assert_eq!(pred.labels, vec![0, 1, 2]);
    }

    #[test]
    fn empty_cache_is_an_error() {
        let (text, train, cfg) = separable();
        let mut cache = build_cache(&train, &text, &cfg).unwrap();
        let keep: Vec<usize> = vec![];
        cache.features = cache.features.select(&keep);
        cache.labels = Array2::zeros((0, 3));
        cache.probs = Array2::zeros((0, 3));
        assert!(matches!(
            tfup_classify(&train, &cache, &text, &cfg),
            Err(Error::EmptyCache)
        ));
    }

    #[test]
    fn gamma_zero_is_zero_shot() {
        let (text, _, cfg) = separable();
        let test = EmbeddingMatrix::with_prefix(
            array![[0.6, 0.8, 0.0], [0.0, 0.6, 0.8], [0.8, 0.0, 0.6]],
            "q",
        )
        .unwrap();
        let cache = build_cache(&test, &text, &cfg).unwrap();
        let cfg = RunConfig { gamma: 0.0, ..cfg };
        let zs = zero_shot_classify(&test, &text, cfg.logit_scale).unwrap();
        let got = tfup_classify(&test, &cache, &text, &cfg).unwrap();
        assert_eq!(got.labels, zs.labels);
    }

    #[test]
    fn scale_mismatch_rejected() {
        let (text, train, cfg) = separable();
        let cache = build_cache(&train, &text, &cfg).unwrap();
        let other = RunConfig {
            logit_scale: LogitScale::UNIT,
            ..cfg
        };
        assert!(matches!(
            tfup_classify(&train, &cache, &text, &other),
            Err(Error::Config(_))
        ));
    }
}
