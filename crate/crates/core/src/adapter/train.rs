use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grad::{loss_and_gradients, Gradients};
use super::AdapterParams;
use crate::cache::CacheModel;
use crate::config::{LrSchedule, OptimizerKind, RunConfig, TfuptMode};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::msm::{cache_scores, fuse, tfup_classify};
use crate::zeroshot::{predict, scaled_dot, softmax_rows, PredictionBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean over batches of the masked cross-entropy.
    pub ce_loss: f64,
    /// Mean over batches of the marginal-entropy loss.
    pub md_loss: f64,
    /// Fraction of samples seen this epoch that passed the confidence mask.
    pub mask_fraction: f64,
    /// Agreement of adapter predictions with the fixed pseudo-labels after
    /// the epoch.
    pub pseudo_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAccuracy {
    pub mode: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_pseudo_accuracy: f64,
    pub epochs: Vec<EpochStats>,
    /// Filled in by callers that hold labelled evaluation data.
    pub final_eval: Vec<ModeAccuracy>,
}

impl TrainReport {
    /// One JSON object per line: an `init` record, one `epoch` record per
    /// epoch, then one `eval` record per evaluated mode.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut line = |v: serde_json::Value| {
            out.push_str(&v.to_string());
            out.push('\n');
        };
        line(serde_json::json!({
            "record": "init",
            "pseudo_accuracy": self.initial_pseudo_accuracy,
        }));
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).expect("plain struct");
            v.as_object_mut()
                .expect("object")
                .insert("record".into(), "epoch".into());
            line(v);
        }
        for m in &self.final_eval {
            line(serde_json::json!({ "record": "eval", "mode": m.mode, "accuracy": m.accuracy }));
        }
        out
    }
}

/// Scaled cosine logits between adapted image and adapted text features.
pub fn adapted_logits(
    params: &AdapterParams,
    feats: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    scale: f64,
) -> Result<Array2<f64>> {
    let x = params.adapt_images(feats)?;
    let t = params.adapt_text(text)?;
    Ok(scaled_dot(x.data(), t.data(), scale))
}

/// Fraction of rows whose adapter prediction equals the given pseudo-label.
pub fn pseudo_accuracy(
    params: &AdapterParams,
    feats: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    pseudo: &[usize],
    scale: f64,
) -> Result<f64> {
    if pseudo.is_empty() {
        return Ok(0.0);
    }
    let logits = adapted_logits(params, feats, text, scale)?;
    let (labels, _) = predict(logits.view());
    let hits = labels.iter().zip(pseudo).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pseudo.len() as f64)
}

/// Classification after adapter training.
///
/// `Adapter`: softmax of scaled cosine between adapted image and text
/// features. `AdapterCache`: additionally adds `gamma` times the cache term,
/// computed with adapted test and prototype features against the cache's
/// frozen prototype distributions.
pub fn tfupt_classify(
    f_test: &EmbeddingMatrix,
    params: &AdapterParams,
    text: &EmbeddingMatrix,
    cache: &CacheModel,
    cfg: &RunConfig,
    mode: TfuptMode,
) -> Result<PredictionBatch> {
    f_test.check_same_dim(text, "test vs text features")?;
    let x = params.adapt_images(f_test)?;
    let t = params.adapt_text(text)?;
    let logits = scaled_dot(x.data(), t.data(), cfg.logit_scale.get());
    match mode {
        TfuptMode::Adapter => PredictionBatch::from_logits(logits),
        TfuptMode::AdapterCache => {
            if cache.meta.num_classes != text.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "cache has {} classes, text features {}",
                    cache.meta.num_classes,
                    text.rows()
                )));
            }
            let probs = softmax_rows(logits.view())?;
            let proto = params.adapt_images(&cache.features)?;
            let (_, sim) = cache_scores(&x, probs.view(), &proto, cache, cfg.similarity)?;
            PredictionBatch::from_logits(fuse(probs.view(), sim.view(), cfg.gamma)?)
        }
    }
}

struct Optimizer {
    kind: OptimizerKind,
    momentum: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    const ADAM_B1: f64 = 0.9;
    const ADAM_B2: f64 = 0.999;
    const ADAM_EPS: f64 = 1e-8;

    fn new(kind: OptimizerKind, momentum: f64, params: &AdapterParams) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .image
            .slices()
            .iter()
            .chain(params.text.slices().iter())
            .map(|s| vec![0.0; s.len()])
            .collect();
        Self {
            kind,
            momentum,
            second: zeros.clone(),
            first: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut AdapterParams, grads: &Gradients, lr: f64) {
        self.t += 1;
        let [a, b, c, d] = params.image.slices_mut();
        let [e, f, g, h] = params.text.slices_mut();
        let targets = [a, b, c, d, e, f, g, h];
        let sources = grads.image.slices().into_iter().chain(grads.text.slices());
        for (i, (w, grad)) in targets.into_iter().zip(sources).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => {
                    let v = &mut self.first[i];
                    for ((wj, &gj), vj) in w.iter_mut().zip(grad).zip(v.iter_mut()) {
                        *vj = self.momentum * *vj + gj;
                        *wj -= lr * *vj;
                    }
                }
                OptimizerKind::Adam => {
                    let c1 = 1.0 - Self::ADAM_B1.powi(self.t);
                    let c2 = 1.0 - Self::ADAM_B2.powi(self.t);
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (j, (wj, &gj)) in w.iter_mut().zip(grad).enumerate() {
                        m[j] = Self::ADAM_B1 * m[j] + (1.0 - Self::ADAM_B1) * gj;
                        v[j] = Self::ADAM_B2 * v[j] + (1.0 - Self::ADAM_B2) * gj * gj;
                        *wj -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + Self::ADAM_EPS);
                    }
                }
            }
        }
    }
}

fn learning_rate(cfg: &RunConfig, step: usize, total: usize) -> f64 {
    let base = cfg.train.learning_rate;
    match cfg.train.schedule {
        LrSchedule::Constant => base,
        LrSchedule::Cosine => {
            let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
            0.5 * base * (1.0 + (std::f64::consts::PI * frac).cos())
        }
    }
}

/// Initializes adapters from `cfg.train.seed` and trains them.
pub fn train(
    train_feats: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    cache: &CacheModel,
    cfg: &RunConfig,
) -> Result<(AdapterParams, TrainReport)> {
    let d = train_feats.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let init = AdapterParams::init(
        d,
        cfg.hidden_dim(d),
        cfg.alpha,
        cfg.beta,
        cfg.train.init_scale,
        &mut rng,
    )?;
    train_from(init, train_feats, text, cache, cfg)
}

/// Trains the given adapters on unlabeled features.
///
/// Pseudo-labels come from the training-free pipeline on the frozen features
/// and stay fixed for the whole run. Each step minimises the masked
/// cross-entropy plus `lambda_md` times the marginal-entropy loss on a
/// shuffled mini-batch.
pub fn train_from(
    mut params: AdapterParams,
    train_feats: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    cache: &CacheModel,
    cfg: &RunConfig,
) -> Result<(AdapterParams, TrainReport)> {
    cfg.validate()?;
    train_feats.check_same_dim(text, "train vs text features")?;
    if params.dim() != train_feats.dim() {
        return Err(Error::DimensionMismatch(format!(
            "adapters of width {} on d={} features",
            params.dim(),
            train_feats.dim()
        )));
    }
    let tc = &cfg.train;
    let scale = cfg.logit_scale.get();
    let pseudo = tfup_classify(train_feats, cache, text, cfg)?.labels;

    let mut report = TrainReport {
        initial_pseudo_accuracy: pseudo_accuracy(&params, train_feats, text, &pseudo, scale)?,
        ..TrainReport::default()
    };

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle_rng.set_stream(1);
    let mut opt = Optimizer::new(tc.optimizer, tc.momentum, &params);
    let m = train_feats.rows();
    let batches_per_epoch = m.div_ceil(tc.batch_size);
    let total_steps = batches_per_epoch * tc.epochs;
    let mut step = 0;
    let mut order: Vec<usize> = (0..m).collect();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut ce, mut md, mut masked, mut seen, mut batches) = (0.0, 0.0, 0usize, 0usize, 0usize);
        let mut lr = learning_rate(cfg, step, total_steps);
        for chunk in order.chunks(tc.batch_size) {
            if chunk.len() < 2 && tc.lambda_md > 0.0 {
                continue;
            }
            let feats = train_feats.data().select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| pseudo[i]).collect();
            let (parts, grads) =
                loss_and_gradients(&params, feats.view(), text.data(), &labels, scale, tc)?;
            if !parts.total.is_finite() {
                return Err(Error::Numerical(format!("loss became {} at epoch {epoch}", parts.total)));
            }
            lr = learning_rate(cfg, step, total_steps);
            opt.step(&mut params, &grads, lr);
            if !params.is_finite() {
                return Err(Error::Numerical(format!("adapter weights diverged at epoch {epoch}")));
            }
            ce += parts.ce;
            md += parts.md;
            masked += parts.masked;
            seen += chunk.len();
            batches += 1;
            step += 1;
        }
        let nb = batches.max(1) as f64;
        report.epochs.push(EpochStats {
            epoch,
            ce_loss: ce / nb,
            md_loss: md / nb,
            mask_fraction: if seen == 0 { 0.0 } else { masked as f64 / seen as f64 },
            pseudo_accuracy: pseudo_accuracy(&params, train_feats, text, &pseudo, scale)?,
            learning_rate: lr,
        });
        log::debug!("epoch {epoch}: {:?}", report.epochs.last());
    }
    Ok((params, report))
}
