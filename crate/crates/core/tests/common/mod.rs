//! Straight-line reference implementations on plain `Vec`s, written without
//! the library's matrix code, plus small random-instance helpers.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tfup::config::{Eq4Scope, FilterStrategy, SimilarityMeasure};
use tfup::EmbeddingMatrix;

pub type Mat = Vec<Vec<f64>>;

pub const EPS: f64 = 1e-12;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    for &v in row {
        if v > m {
            m = v;
        }
    }
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// First index of the maximum.
pub fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let pi = p[i].max(EPS);
        let qi = q[i].max(EPS);
        s += pi * (pi / qi).ln();
    }
    s.max(0.0)
}

pub fn class_probs(x: &[f64], text: &Mat, scale: f64) -> Vec<f64> {
    let logits: Vec<f64> = text.iter().map(|t| scale * dot(x, t)).collect();
    softmax(&logits)
}

pub fn to_mat(m: &EmbeddingMatrix) -> Mat {
    m.data().rows().into_iter().map(|r| r.to_vec()).collect()
}

/// `order` sorted by descending key, ties to the lower candidate position.
fn top(cands: &[usize], keep: usize, key: &dyn Fn(usize) -> f64) -> Vec<usize> {
    let mut v: Vec<usize> = cands.to_vec();
    // insertion sort: stable, so equal keys keep candidate order
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 && key(v[j]) > key(v[j - 1]) {
            v.swap(j, j - 1);
            j -= 1;
        }
    }
    v.truncate(keep);
    v
}

pub struct NaiveCfg {
    pub scale: f64,
    pub k: usize,
    pub n: usize,
    pub gamma: f64,
    pub filter: FilterStrategy,
    pub scope: Eq4Scope,
    pub measure: SimilarityMeasure,
}

/// Cache rows (training-row indices) per class.
pub fn naive_select(train: &Mat, text: &Mat, cfg: &NaiveCfg) -> Vec<Vec<usize>> {
    let c = text.len();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    let mut conf = vec![0.0; train.len()];
    for (i, x) in train.iter().enumerate() {
        let p = class_probs(x, text, cfg.scale);
        let l = first_argmax(&p);
        conf[i] = p[l];
        by_class[l].push(i);
    }
    let by_conf = |sets: &Vec<Vec<usize>>, keep: usize| -> Vec<Vec<usize>> {
        sets.iter().map(|s| top(s, keep, &|r| conf[r])).collect()
    };
    let by_proto = |sets: &Vec<Vec<usize>>, keep: usize| -> Vec<Vec<usize>> {
        let all: Vec<usize> = sets.iter().flatten().copied().collect();
        sets.iter()
            .map(|s| {
                let pool = match cfg.scope {
                    Eq4Scope::PerClass => s.clone(),
                    Eq4Scope::Global => all.clone(),
                };
                let score = |r: usize| pool.iter().map(|&j| dot(&train[r], &train[j])).sum::<f64>();
                top(s, keep, &score)
            })
            .collect()
    };
    match cfg.filter {
        FilterStrategy::None => by_class,
        FilterStrategy::Confidence => by_conf(&by_class, cfg.k),
        FilterStrategy::Prototype => by_proto(&by_class, cfg.k),
        FilterStrategy::Double => by_proto(&by_conf(&by_class, cfg.k), cfg.n),
    }
}

/// Fused class scores `p_test + gamma * W_fsm . L_proto` for every test row.
pub fn naive_tfup(train: &Mat, test: &Mat, text: &Mat, cfg: &NaiveCfg) -> Mat {
    let c = text.len();
    let sel = naive_select(train, text, cfg);
    let mut feats = Vec::new();
    let mut labels = Vec::new();
    let mut probs = Vec::new();
    for (class, rows) in sel.iter().enumerate() {
        for &r in rows {
            feats.push(train[r].clone());
            labels.push(class);
            probs.push(class_probs(&train[r], text, cfg.scale));
        }
    }
    let p = feats.len();
    let mut out = Vec::new();
    for x in test {
        let pt = class_probs(x, text, cfg.scale);
        let d: Vec<f64> = probs.iter().map(|q| kl(&pt, q)).collect();
        let w_sem: Vec<f64> = if p == 1 {
            vec![1.0]
        } else {
            softmax(&d).iter().map(|s| 1.0 - s).collect()
        };
        let mut row = pt.clone();
        for j in 0..p {
            let w_cont = dot(x, &feats[j]);
            let w = match cfg.measure {
                SimilarityMeasure::Feature => w_cont,
                SimilarityMeasure::Semantic => w_sem[j],
                SimilarityMeasure::MultiLevel => w_cont * w_sem[j],
            };
            row[labels[j]] += cfg.gamma * w;
        }
        assert_eq!(row.len(), c);
        out.push(row);
    }
    out
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if dot(&v, &v) > 1e-3 {
            return unit(&v);
        }
    }
}

pub fn random_units(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Mat {
    (0..rows).map(|_| random_unit(rng, d)).collect()
}

pub fn random_stochastic(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..c).map(|_| rng.random_range(1e-3..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

pub fn matrix(rows: &Mat, prefix: &str) -> EmbeddingMatrix {
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let data = ndarray::Array2::from_shape_vec((rows.len(), d), flat).unwrap();
    EmbeddingMatrix::with_prefix(data, prefix).unwrap()
}
