//! Residual MLP adapters on frozen image and text features.
//!
//! Each adapter is `x -> normalize(r * MLP(x) + (1 - r) * x)` with
//! `MLP(x) = relu(x W1 + b1) W2 + b2` (row-vector convention) and a fixed
//! residual ratio `r` (`alpha` for images, `beta` for text).

mod checkpoint;
mod grad;
mod loss;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::{EmbeddingMatrix, MIN_ROW_NORM};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TFA_MAGIC};
pub use grad::{batch_loss, loss_and_gradients, Gradients, LossParts};
pub use loss::{ce_masked_loss, marginal_entropy_loss};
pub use train::{
    adapted_logits, pseudo_accuracy, tfupt_classify, train, train_from, EpochStats, ModeAccuracy,
    TrainReport,
};

/// Two-layer bottleneck MLP, `d -> h -> d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            w1: Array2::zeros((d, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, d)),
            b2: Array1::zeros(d),
        }
    }

    /// `W1` uniform in `±init_scale / sqrt(d)`; everything else zero, so the
    /// MLP initially outputs 0 and the adapter starts as the identity.
    pub fn init(d: usize, h: usize, init_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(d, h);
        let bound = init_scale / (d as f64).sqrt();
        if bound > 0.0 {
            m.w1.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        m
    }

    /// `relu(x) - relu(-x) = x` with `h = 2d`: an exact pass-through.
    pub fn pass_through(d: usize) -> Self {
        let mut m = Self::zeros(d, 2 * d);
        for i in 0..d {
            m.w1[[i, i]] = 1.0;
            m.w1[[i, d + i]] = -1.0;
            m.w2[[i, i]] = 1.0;
            m.w2[[d + i, i]] = -1.0;
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut hidden = x.dot(&self.w1) + &self.b1;
        hidden.mapv_inplace(|v| v.max(0.0));
        hidden.dot(&self.w2) + &self.b2
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if self.input_dim() != d || self.w2.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "adapter of width {} applied to d={d} features",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Image and text adapters plus their fixed residual ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub image: Mlp,
    pub text: Mlp,
    pub alpha: f64,
    pub beta: f64,
}

impl AdapterParams {
    pub fn new(image: Mlp, text: Mlp, alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if image.input_dim() != text.input_dim() {
            return Err(Error::DimensionMismatch(
                "image and text adapters have different widths".into(),
            ));
        }
        Ok(Self {
            image,
            text,
            alpha,
            beta,
        })
    }

    /// Fresh adapters: image adapter first, then text, from one seeded stream.
    pub fn init(d: usize, h: usize, alpha: f64, beta: f64, init_scale: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        let image = Mlp::init(d, h, init_scale, rng);
        let text = Mlp::init(d, h, init_scale, rng);
        Self::new(image, text, alpha, beta)
    }

    pub fn dim(&self) -> usize {
        self.image.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.image.hidden_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.image.is_finite() && self.text.is_finite()
    }

    pub fn adapt_images(&self, feats: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        adapter_forward(feats, &self.image, self.alpha)
    }

    pub fn adapt_text(&self, feats: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        adapter_forward(feats, &self.text, self.beta)
    }
}

/// Mixes `ratio * MLP(f) + (1 - ratio) * f` and renormalizes each row.
/// `ratio == 0` returns the input unchanged.
pub fn adapter_forward(feats: &EmbeddingMatrix, mlp: &Mlp, ratio: f64) -> Result<EmbeddingMatrix> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("residual ratio must be in [0, 1], got {ratio}")));
    }
    mlp.check_dim(feats.dim())?;
    if ratio == 0.0 {
        return Ok(feats.clone());
    }
    let mixed = residual_mix(feats.data(), mlp, ratio);
    let out = normalize_rows(mixed)?;
    Ok(EmbeddingMatrix::from_parts_unchecked(out, feats.ids().to_vec()))
}

pub(crate) fn residual_mix(x: ArrayView2<f64>, mlp: &Mlp, ratio: f64) -> Array2<f64> {
    let mut m = mlp.apply(x);
    m.zip_mut_with(&x, |o, &xi| *o = ratio * *o + (1.0 - ratio) * xi);
    m
}

pub(crate) fn normalize_rows(mut m: Array2<f64>) -> Result<Array2<f64>> {
    for (i, mut row) in m.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > MIN_ROW_NORM && norm.is_finite()) {
            return Err(Error::Numerical(format!(
                "adapted feature row {i} has norm {norm}"
            )));
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(m)
}
