//! Accuracy reports, ablation tables, and hyper-parameter sweeps.
//!
//! Reports are written as JSON lines, one record per evaluated mode, with a
//! `version` field on every record.

use std::fmt;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::{tfupt_classify, train, AdapterParams};
use crate::cache::build_cache;
use crate::config::{FilterStrategy, RunConfig, SimilarityMeasure, TfuptMode};
use crate::embedding::{DatasetManifest, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::msm::tfup_classify;
use crate::synthetic::Fixture;
use crate::zeroshot::{zero_shot_classify, PredictionBatch};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub mode: String,
    /// Top-1 accuracy.
    pub accuracy: f64,
    /// `None` for classes absent from the ground truth.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub samples: usize,
    pub config: RunConfig,
}

impl EvalReport {
    pub fn correct(&self) -> u64 {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} acc {:.4} ({}/{})",
            self.mode,
            self.accuracy,
            self.correct(),
            self.samples
        )
    }
}

/// Scores predicted labels against ground truth.
pub fn evaluate_labels(
    mode: &str,
    predicted: &[usize],
    truth: &[usize],
    num_classes: usize,
    config: &RunConfig,
) -> Result<EvalReport> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} ground-truth labels",
            predicted.len(),
            truth.len()
        )));
    }
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Data(format!(
                "class index out of range (pred {p}, truth {t}, C={num_classes})"
            )));
        }
        confusion[t][p] += 1;
    }
    let correct: u64 = (0..num_classes).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    let samples = truth.len();
    let accuracy = if samples == 0 {
        0.0
    } else {
        correct as f64 / samples as f64
    };
    Ok(EvalReport {
        version: REPORT_VERSION,
        mode: mode.to_owned(),
        accuracy,
        per_class_accuracy,
        confusion,
        samples,
        config: config.clone(),
    })
}

/// Scores a batch whose rows correspond to `ids`, looking ground truth up in
/// the manifest.
pub fn evaluate(
    mode: &str,
    predictions: &PredictionBatch,
    ids: &[String],
    manifest: &DatasetManifest,
    config: &RunConfig,
) -> Result<EvalReport> {
    if ids.len() != predictions.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} ids",
            predictions.len(),
            ids.len()
        )));
    }
    let truth = ground_truth(ids, manifest)?;
    evaluate_labels(mode, &predictions.labels, &truth, manifest.num_classes(), config)
}

/// Class index of every id, in order. Errors on unknown or unlabeled ids.
pub fn ground_truth(ids: &[String], manifest: &DatasetManifest) -> Result<Vec<usize>> {
    let lookup = manifest.labels();
    ids.iter()
        .map(|id| match lookup.get(id.as_str()) {
            Some(Some(c)) => Ok(*c),
            Some(None) => Err(Error::Data(format!("sample `{id}` has no ground truth"))),
            None => Err(Error::Data(format!("sample `{id}` is not in the manifest"))),
        })
        .collect()
}

pub fn reports_to_jsonl(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).expect("report serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_reports(text: &str) -> Result<Vec<EvalReport>> {
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let body = line.trim_end();
        if !body.is_empty() {
            let r: EvalReport = serde_json::from_str(body)
                .map_err(|e| Error::format(offset, format!("report record: {e}")))?;
            if r.version != REPORT_VERSION {
                return Err(Error::format(
                    offset,
                    format!("unsupported report version {}", r.version),
                ));
            }
            out.push(r);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

pub fn emit_report(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, reports_to_jsonl(reports)).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: impl AsRef<Path>) -> Result<Vec<EvalReport>> {
    let path = path.as_ref();
    parse_reports(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// One cell of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub enum Pipeline {
    ZeroShot,
    /// Training-free inference with the cache built and queried per `cfg`.
    Tfup,
    /// Adapter training, then inference in `cfg.tfupt_mode`.
    TfupT,
}

/// Labelled evaluation data plus unlabeled training features.
pub struct EvalData<'a> {
    pub train: &'a EmbeddingMatrix,
    pub test: &'a EmbeddingMatrix,
    pub text: &'a EmbeddingMatrix,
    pub test_labels: &'a [usize],
}

impl<'a> From<&'a Fixture> for EvalData<'a> {
    fn from(fx: &'a Fixture) -> Self {
        Self {
            train: &fx.train,
            test: &fx.test,
            text: &fx.text,
            test_labels: &fx.test_labels,
        }
    }
}

/// Runs one pipeline end to end and scores it.
pub fn run_pipeline(
    mode: &str,
    pipeline: &Pipeline,
    data: &EvalData<'_>,
    cfg: &RunConfig,
) -> Result<EvalReport> {
    let c = data.text.rows();
    let preds = match pipeline {
        Pipeline::ZeroShot => zero_shot_classify(data.test, data.text, cfg.logit_scale)?,
        Pipeline::Tfup => {
            let cache = build_cache(data.train, data.text, cfg)?;
            tfup_classify(data.test, &cache, data.text, cfg)?
        }
        Pipeline::TfupT => {
            let cache = build_cache(data.train, data.text, cfg)?;
            let (params, _) = train(data.train, data.text, &cache, cfg)?;
            tfupt_classify(data.test, &params, data.text, &cache, cfg, cfg.tfupt_mode)?
        }
    };
    evaluate_labels(mode, &preds.labels, data.test_labels, c, cfg)
}

/// Every ablation cell: component stacking, filter strategies, and
/// similarity measures, derived from `base`.
pub fn ablation_cells(base: &RunConfig) -> Vec<(String, Pipeline, RunConfig)> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let mut cells = vec![
        ("zeroshot".to_owned(), Pipeline::ZeroShot, base.clone()),
        (
            "fcm+fsm".into(),
            Pipeline::Tfup,
            with(&|c| c.similarity = SimilarityMeasure::Feature),
        ),
        (
            "fcm+msm".into(),
            Pipeline::Tfup,
            with(&|c| c.similarity = SimilarityMeasure::MultiLevel),
        ),
        (
            "tfup-t(-md)".into(),
            Pipeline::TfupT,
            with(&|c| c.train.lambda_md = 0.0),
        ),
        ("tfup-t".into(), Pipeline::TfupT, base.clone()),
    ];
    for (name, filter) in [
        ("none", FilterStrategy::None),
        ("confidence", FilterStrategy::Confidence),
        ("prototype", FilterStrategy::Prototype),
        ("double", FilterStrategy::Double),
    ] {
        cells.push((
            format!("filter:{name}"),
            Pipeline::Tfup,
            with(&|c| c.filter = filter),
        ));
    }
    for (name, m) in [
        ("feature", SimilarityMeasure::Feature),
        ("semantic", SimilarityMeasure::Semantic),
        ("multi-level", SimilarityMeasure::MultiLevel),
    ] {
        cells.push((
            format!("measure:{name}"),
            Pipeline::Tfup,
            with(&|c| c.similarity = m),
        ));
    }
    cells
}

/// Runs every ablation cell. Cells run in parallel; output order matches
/// [`ablation_cells`].
pub fn ablation_suite(data: &EvalData<'_>, cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    cfg.validate()?;
    ablation_cells(cfg)
        .par_iter()
        .map(|(mode, pipeline, c)| run_pipeline(mode, pipeline, data, c))
        .collect()
}

/// Value lists for a grid sweep; an empty list means "use the base config".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub ks: Vec<usize>,
    pub ns: Vec<usize>,
    pub gammas: Vec<f64>,
}

impl SweepGrid {
    pub fn points(&self, base: &RunConfig) -> Vec<RunConfig> {
        fn or<T: Copy>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::new();
        for &alpha in &or(&self.alphas, base.alpha) {
            for &beta in &or(&self.betas, base.beta) {
                for &k in &or(&self.ks, base.k) {
                    for &n in &or(&self.ns, base.n) {
                        for &gamma in &or(&self.gammas, base.gamma) {
                            out.push(RunConfig {
                                alpha,
                                beta,
                                k,
                                n,
                                gamma,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn sweep_point_name(c: &RunConfig) -> String {
    format!(
        "sweep alpha={} beta={} k={} n={} gamma={}",
        c.alpha, c.beta, c.k, c.n, c.gamma
    )
}

/// Evaluates the adapter pipeline at every grid point. With
/// `train.epochs == 0` each point reports the freshly initialized adapters.
pub fn sweep(data: &EvalData<'_>, base: &RunConfig, grid: &SweepGrid) -> Result<Vec<EvalReport>> {
    let points = grid.points(base);
    for p in &points {
        p.validate()?;
    }
    points
        .par_iter()
        .map(|c| run_pipeline(&sweep_point_name(c), &Pipeline::TfupT, data, c))
        .collect()
}

/// Adapter-pipeline evaluation with given (e.g. loaded) parameters.
pub fn evaluate_adapters(
    mode_name: &str,
    params: &AdapterParams,
    data: &EvalData<'_>,
    cfg: &RunConfig,
    mode: TfuptMode,
) -> Result<EvalReport> {
    let cache = build_cache(data.train, data.text, cfg)?;
    let preds = tfupt_classify(data.test, params, data.text, &cache, cfg, mode)?;
    evaluate_labels(mode_name, &preds.labels, data.test_labels, data.text.rows(), cfg)
}
