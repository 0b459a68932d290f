//! Feature cache construction: pseudo-labels, confidence filter, prototype
//! filter, and the `TFC1` file format.
//!
//! `TFC1` layout (little-endian):
//!
//! ```text
//! "TFC1"
//! u32 K, u32 N, u32 C, u32 d, f32 logit scale
//! u32 * C      per-class prototype counts (P = sum)
//! f32 * P*d    prototype features
//! f32 * P*C    one-hot prototype labels
//! f32 * P*C    prototype class probabilities
//! id block     P newline-terminated prototype sample ids
//! ```

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::binio::{self, ByteReader};
use crate::config::{Eq4Scope, FilterStrategy, LogitScale, RunConfig};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::zeroshot::{argmax, scaled_dot, softmax_rows, zero_shot_classify};

pub const TFC_MAGIC: &[u8; 4] = b"TFC1";

/// Argmax pseudo-label and confidence for every training row.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    pub confidence: Vec<f64>,
    /// Row indices per class, ascending.
    pub by_class: Vec<Vec<usize>>,
}

impl PseudoLabelSet {
    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }
}

pub fn pseudo_label(train_probs: ArrayView2<f64>) -> PseudoLabelSet {
    let c = train_probs.ncols();
    let mut by_class = vec![Vec::new(); c];
    let (labels, confidence): (Vec<_>, Vec<_>) = train_probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .unzip();
    for (row, &l) in labels.iter().enumerate() {
        by_class[l].push(row);
    }
    PseudoLabelSet {
        labels,
        confidence,
        by_class,
    }
}

/// Sorts `candidates` by descending `key`, breaking ties by ascending
/// candidate index, and keeps the first `n`.
fn top_n_by(candidates: &[usize], n: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Per class, the `min(k, available)` most confident rows, most confident first.
pub fn confidence_filter(pl: &PseudoLabelSet, k: usize) -> Vec<Vec<usize>> {
    pl.by_class
        .iter()
        .map(|rows| top_n_by(rows, k, |r| pl.confidence[r]))
        .collect()
}

/// Sum of cosine similarities of each row to every row of `pool`. With
/// `pool == class_feats` this includes the self term, which is exactly 1 for
/// unit rows.
pub fn prototype_score_against(class_feats: ArrayView2<f64>, pool: ArrayView2<f64>) -> Vec<f64> {
    class_feats
        .rows()
        .into_iter()
        .map(|f| pool.rows().into_iter().map(|g| f.dot(&g)).sum())
        .collect()
}

pub fn prototype_score(class_feats: ArrayView2<f64>) -> Vec<f64> {
    prototype_score_against(class_feats, class_feats)
}

/// Indices of the `min(n, len)` highest scores, highest first; ties go to the
/// lower index.
pub fn prototype_filter(scores: &[f64], n: usize) -> Vec<usize> {
    let idx: Vec<usize> = (0..scores.len()).collect();
    top_n_by(&idx, n, |i| scores[i])
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheMeta {
    pub k: usize,
    pub n: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub logit_scale: LogitScale,
    /// Prototypes contributed by each class.
    pub class_counts: Vec<usize>,
}

/// Key-value cache of prototype features and their one-hot pseudo-labels.
/// Rows are grouped by class in class-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheModel {
    pub features: EmbeddingMatrix,
    pub labels: Array2<f64>,
    /// Zero-shot class distribution of each prototype.
    pub probs: Array2<f64>,
    pub meta: CacheMeta,
}

impl CacheModel {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class of each cache row.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .rows()
            .into_iter()
            .map(|r| argmax(r.iter().copied()).0)
            .collect()
    }

    pub fn empty_classes(&self) -> Vec<usize> {
        self.meta
            .class_counts
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| c)
            .collect()
    }

    /// Human-readable build summary, one line per class plus warnings.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "cache: P={} prototypes, C={}, d={}, K={}, N={}, scale={}\n",
            self.len(),
            self.meta.num_classes,
            self.meta.dim,
            self.meta.k,
            self.meta.n,
            self.meta.logit_scale.get()
        );
        for (c, n) in self.meta.class_counts.iter().enumerate() {
            s.push_str(&format!("  class {c}: {n}\n"));
        }
        for c in self.empty_classes() {
            s.push_str(&format!("warning: class {c} has no prototypes\n"));
        }
        s
    }

    /// Assembles a cache from chosen training rows and their classes.
    fn assemble(
        train: &EmbeddingMatrix,
        text: &EmbeddingMatrix,
        per_class: &[Vec<usize>],
        cfg: &RunConfig,
    ) -> Result<CacheModel> {
        let c = text.rows();
        let rows: Vec<usize> = per_class.iter().flatten().copied().collect();
        let features = train.select(&rows);
        let mut labels = Array2::zeros((rows.len(), c));
        let mut p = 0;
        for (class, sel) in per_class.iter().enumerate() {
            for _ in sel {
                labels[[p, class]] = 1.0;
                p += 1;
            }
        }
        let probs = softmax_rows(
            scaled_dot(features.data(), text.data(), cfg.logit_scale.get()).view(),
        )?;
        let meta = CacheMeta {
            k: cfg.k,
            n: cfg.n,
            num_classes: c,
            dim: train.dim(),
            logit_scale: cfg.logit_scale,
            class_counts: per_class.iter().map(Vec::len).collect(),
        };
        let cm = CacheModel {
            features,
            labels,
            probs,
            meta,
        };
        for c in cm.empty_classes() {
            log::warn!("class {c} contributes no cache entries");
        }
        Ok(cm)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let m = &self.meta;
        let mut out = Vec::new();
        out.extend_from_slice(TFC_MAGIC);
        for (v, what) in [(m.k, "K"), (m.n, "N"), (m.num_classes, "C"), (m.dim, "d")] {
            binio::put_u32(&mut out, binio::to_u32(v, what)?);
        }
        binio::put_f32(&mut out, m.logit_scale.get());
        for &n in &m.class_counts {
            binio::put_u32(&mut out, binio::to_u32(n, "class count")?);
        }
        binio::put_f32_block(&mut out, self.features.data().iter());
        binio::put_f32_block(&mut out, self.labels.iter());
        binio::put_f32_block(&mut out, self.probs.iter());
        binio::put_ids(&mut out, self.features.ids());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(TFC_MAGIC)?;
        let k = r.u32("K")? as usize;
        let n = r.u32("N")? as usize;
        let c = r.u32("C")? as usize;
        let d = r.u32("d")? as usize;
        let scale_at = r.offset();
        let logit_scale = LogitScale::new(f64::from(r.f32("logit scale")?))
            .map_err(|e| Error::format(scale_at, e.to_string()))?;
        let class_counts = (0..c)
            .map(|_| r.u32("class counts").map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let p: usize = class_counts.iter().sum();
        let shape = |at: u64, rows: usize, cols: usize, v: Vec<f64>| {
            Array2::from_shape_vec((rows, cols), v).map_err(|e| Error::format(at, e.to_string()))
        };
        let at = r.offset();
        let feats = shape(at, p, d, r.f32_block(p * d, "prototype features")?)?;
        let at = r.offset();
        let labels = shape(at, p, c, r.f32_block(p * c, "prototype labels")?)?;
        let at = r.offset();
        let probs = shape(at, p, c, r.f32_block(p * c, "prototype probabilities")?)?;
        let at = r.offset();
        let ids = r.id_block(p)?;
        let features = EmbeddingMatrix::new(feats, ids).map_err(|e| Error::format(at, e.to_string()))?;
        Ok(CacheModel {
            features,
            labels,
            probs,
            meta: CacheMeta {
                k,
                n,
                num_classes: c,
                dim: d,
                logit_scale,
                class_counts,
            },
        })
    }
}

pub fn save_cache(cm: &CacheModel, path: impl AsRef<Path>) -> Result<()> {
    binio::write_file(path.as_ref(), &cm.to_bytes()?)
}

pub fn load_cache(path: impl AsRef<Path>) -> Result<CacheModel> {
    CacheModel::from_bytes(&binio::read_file(path.as_ref())?)
}

/// Rows chosen for the cache, per class, under `cfg.filter`.
///
/// Returned lists hold training-row indices in cache order: for the double
/// filter, descending prototype score.
pub fn select_rows(
    train: &EmbeddingMatrix,
    pl: &PseudoLabelSet,
    cfg: &RunConfig,
) -> Vec<Vec<usize>> {
    match cfg.filter {
        FilterStrategy::None => pl.by_class.clone(),
        FilterStrategy::Confidence => confidence_filter(pl, cfg.k),
        FilterStrategy::Prototype => prototype_stage(train, &pl.by_class, cfg.k, cfg.eq4_scope),
        FilterStrategy::Double => {
            let confident = confidence_filter(pl, cfg.k);
            prototype_stage(train, &confident, cfg.n, cfg.eq4_scope)
        }
    }
}

/// Scores every candidate and keeps the top `keep` per class.
fn prototype_stage(
    train: &EmbeddingMatrix,
    candidates: &[Vec<usize>],
    keep: usize,
    scope: Eq4Scope,
) -> Vec<Vec<usize>> {
    let global_pool = match scope {
        Eq4Scope::PerClass => None,
        Eq4Scope::Global => {
            let all: Vec<usize> = candidates.iter().flatten().copied().collect();
            Some(train.select(&all))
        }
    };
    candidates
        .par_iter()
        .map(|rows| {
            let feats = train.select(rows);
            let scores = match &global_pool {
                None => prototype_score(feats.data()),
                Some(pool) => prototype_score_against(feats.data(), pool.data()),
            };
            prototype_filter(&scores, keep)
                .into_iter()
                .map(|i| rows[i])
                .collect()
        })
        .collect()
}

/// Pseudo-labels the training set zero-shot, filters it, and precomputes the
/// prototypes' class distributions with the same logit scale.
pub fn build_cache(
    train: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    cfg: &RunConfig,
) -> Result<CacheModel> {
    cfg.validate()?;
    let zs = zero_shot_classify(train, text, cfg.logit_scale)?;
    let pl = pseudo_label(zs.probs.view());
    let per_class = select_rows(train, &pl, cfg);
    CacheModel::assemble(train, text, &per_class, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn pl_from(labels: Vec<usize>, confidence: Vec<f64>, c: usize) -> PseudoLabelSet {
        let mut by_class = vec![Vec::new(); c];
        for (i, &l) in labels.iter().enumerate() {
            by_class[l].push(i);
        }
        PseudoLabelSet {
            labels,
            confidence,
            by_class,
        }
    }

    #[test]
    fn pseudo_label_cases() {
        let pl = pseudo_label(array![[0.9, 0.1], [0.2, 0.8]].view());
        assert_eq!(pl.labels, vec![0, 1]);
        assert_eq!(pl.confidence, vec![0.9, 0.8]);
        let uniform = Array2::from_elem((4, 3), 1.0 / 3.0);
        let pl = pseudo_label(uniform.view());
        assert_eq!(pl.labels, vec![0; 4]);
        assert!(pl.confidence.iter().all(|&c| c == 1.0 / 3.0));
        assert_eq!(pl.by_class, vec![vec![0, 1, 2, 3], vec![], vec![]]);
    }

    #[test]
    fn confidence_filter_top_k() {
        let pl = pl_from(vec![0, 0, 0, 1], vec![0.9, 0.8, 0.7, 0.6], 3);
        assert_eq!(confidence_filter(&pl, 2), vec![vec![0, 1], vec![3], vec![]]);
        assert_eq!(confidence_filter(&pl, 16)[1], vec![3]);
    }

    #[test]
    fn confidence_ties_prefer_lower_row() {
        let pl = pl_from(vec![0, 0, 0], vec![0.5, 0.9, 0.9], 1);
        assert_eq!(confidence_filter(&pl, 2), vec![vec![1, 2]]);
    }

    #[test]
    fn prototype_scores() {
        let same = array![[1.0, 0.0], [1.0, 0.0]];
        assert_eq!(prototype_score(same.view()), vec![2.0, 2.0]);
        let orth = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(prototype_score(orth.view()), vec![1.0, 1.0]);
    }

    #[test]
    fn prototype_filter_cases() {
        let mut got = prototype_filter(&[2.0, 1.5, 1.9], 2);
        got.sort();
        assert_eq!(got, vec![0, 2]);
        assert_eq!(prototype_filter(&[1.0, 3.0], 5), vec![1, 0]);
        assert_eq!(prototype_filter(&[1.0, 1.0, 1.0], 2), vec![0, 1]);
    }

    #[test]
    fn separable_cache() {
        let text = EmbeddingMatrix::with_prefix(Array2::eye(3), "t").unwrap();
        let train = EmbeddingMatrix::with_prefix(Array2::eye(3), "x").unwrap();
        let cfg = RunConfig {
            k: 1,
            n: 1,
            ..RunConfig::default()
        };
        let cm = build_cache(&train, &text, &cfg).unwrap();
        assert_eq!(cm.len(), 3);
        assert_eq!(cm.labels, Array2::<f64>::eye(3));
        assert_eq!(cm.meta.class_counts, vec![1, 1, 1]);
        assert_eq!(cm.features.ids(), ["x0", "x1", "x2"]);
    }

    #[test]
    fn prototype_prefers_central_sample() {
        // Class 0 has two confident rows: the text direction itself and a
        // noisier vector. With two rows both summed cosines are 1 + cos(a, b),
        // so the tie goes to the row ranked first by confidence.
        let s = 0.8f64;
        let t = (1.0 - s * s).sqrt();
        let text = EmbeddingMatrix::with_prefix(array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], "t").unwrap();
        let train = EmbeddingMatrix::with_prefix(
            array![[s, t, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
            "x",
        )
        .unwrap();
        let cfg = RunConfig {
            k: 2,
            n: 1,
            logit_scale: LogitScale::UNIT,
            ..RunConfig::default()
        };
        let cm = build_cache(&train, &text, &cfg).unwrap();
        // Hand-computed: S(x1) = 1 + 0.8 = 1.8 = S(x0); x1 is more confident
        // (cos 1.0 vs 0.8 to the class text), so it ranks first and wins the tie.
        assert_eq!(cm.features.ids(), ["x1", "x2"]);
    }

    #[test]
    fn cache_round_trip_exact_for_f32_values() {
        let text = EmbeddingMatrix::with_prefix(Array2::eye(3), "t").unwrap();
        let train = EmbeddingMatrix::with_prefix(Array2::eye(3), "x").unwrap();
        let cfg = RunConfig {
            k: 2,
            n: 1,
            logit_scale: LogitScale::new(10.0).unwrap(),
            ..RunConfig::default()
        };
        let mut cm = build_cache(&train, &text, &cfg).unwrap();
        cm.probs.mapv_inplace(|v| f64::from(v as f32));
        let back = CacheModel::from_bytes(&cm.to_bytes().unwrap()).unwrap();
        assert_eq!(back, cm);
        assert_eq!((back.meta.k, back.meta.n, back.meta.logit_scale.get()), (2, 1, 10.0));
    }

    #[test]
    fn wrong_magic() {
        let err = CacheModel::from_bytes(b"TFC0\0\0\0\0").unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        assert!(err.to_string().contains("TFC1"));
    }
}
