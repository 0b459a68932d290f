//! Run configuration shared by every pipeline.
//!
//! All keys are optional in a TOML config file; missing keys take the
//! defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positive multiplier applied to cosine similarities before softmax.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitScale(f64);

impl LogitScale {
    /// CLIP's released temperature.
    pub const CLIP: LogitScale = LogitScale(100.0);
    /// Softmax directly on cosine similarities.
    pub const UNIT: LogitScale = LogitScale(1.0);

    pub fn new(scale: f64) -> Result<Self> {
        if scale.is_finite() && scale > 0.0 {
            Ok(Self(scale))
        } else {
            Err(Error::Config(format!("logit scale must be > 0, got {scale}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for LogitScale {
    fn default() -> Self {
        Self::CLIP
    }
}

/// Set of confident samples the prototype score sums over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Eq4Scope {
    /// Same-class confident samples only.
    #[default]
    PerClass,
    /// Confident samples of every class.
    Global,
}

/// How the training set is reduced to cache entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStrategy {
    /// Every training row goes into the cache.
    None,
    /// Top-K most confident rows per class.
    Confidence,
    /// Top-K rows per class ranked by prototype score over all rows of the class.
    Prototype,
    /// Top-K by confidence, then top-N of those by prototype score.
    #[default]
    Double,
}

/// Weighting of cache entries at inference time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMeasure {
    /// Cosine between test and cached features only.
    Feature,
    /// KL-based agreement between predicted distributions only.
    Semantic,
    /// Elementwise product of both.
    #[default]
    MultiLevel,
}

/// Inference path after adapter training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TfuptMode {
    #[default]
    Adapter,
    AdapterCache,
}

impl std::str::FromStr for TfuptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adapter" => Ok(TfuptMode::Adapter),
            "adapter+cache" | "adapter-cache" => Ok(TfuptMode::AdapterCache),
            other => Err(Error::Config(format!("unknown tfup-t mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for TfuptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TfuptMode::Adapter => "adapter",
            TfuptMode::AdapterCache => "adapter+cache",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// SGD with heavy-ball momentum.
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Confidence threshold for the pseudo-label mask.
    pub theta: f64,
    /// Weight of the marginal-entropy loss.
    pub lambda_md: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub schedule: LrSchedule,
    /// Half-width of the uniform init of the first adapter layer, in units
    /// of `1/sqrt(d)`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            theta: 0.95,
            lambda_md: 1.0,
            epochs: 10,
            batch_size: 64,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            schedule: LrSchedule::Constant,
            init_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta must be in (0, 1], got {}", self.theta)));
        }
        if !(self.lambda_md >= 0.0 && self.lambda_md.is_finite()) {
            return Err(Error::Config(format!(
                "lambda-md must be >= 0, got {}",
                self.lambda_md
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be >= 1".into()));
        }
        if self.lambda_md > 0.0 && self.batch_size < 2 {
            return Err(Error::Config(
                "batch-size must be >= 2 when lambda-md > 0".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning-rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init-scale must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub logit_scale: LogitScale,
    /// Confident samples kept per class.
    pub k: usize,
    /// Prototypes kept per class.
    pub n: usize,
    /// Weight of the cache term added to the zero-shot probabilities.
    pub gamma: f64,
    /// Image adapter residual ratio.
    pub alpha: f64,
    /// Text adapter residual ratio.
    pub beta: f64,
    /// Adapter bottleneck reduction factor: hidden width is `d / hidden_ratio`.
    pub hidden_ratio: usize,
    pub eq4_scope: Eq4Scope,
    pub filter: FilterStrategy,
    pub similarity: SimilarityMeasure,
    pub tfupt_mode: TfuptMode,
    /// Adapter training knobs, the `[train]` table of a config file.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            logit_scale: LogitScale::default(),
            k: 16,
            n: 8,
            gamma: 1.0,
            alpha: 0.2,
            beta: 0.5,
            hidden_ratio: 4,
            eq4_scope: Eq4Scope::PerClass,
            filter: FilterStrategy::Double,
            similarity: SimilarityMeasure::MultiLevel,
            tfupt_mode: TfuptMode::Adapter,
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        LogitScale::new(self.logit_scale.get())?;
        if self.n < 1 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.k < self.n {
            return Err(Error::Config(format!(
                "k must be >= n (k={}, n={})",
                self.k, self.n
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if self.hidden_ratio < 1 {
            return Err(Error::Config("hidden-ratio must be >= 1".into()));
        }
        self.train.validate()
    }

    /// Adapter hidden width for feature dimension `d` (at least 1).
    pub fn hidden_dim(&self, d: usize) -> usize {
        (d / self.hidden_ratio).max(1)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }
}
