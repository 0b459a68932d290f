//! Training-free unsupervised adaptation of vision-language classifiers,
//! operating on precomputed, L2-normalized image and text embeddings.
//!
//! The pipeline:
//!
//! 1. [`zeroshot`]: cosine-similarity logits against class text features.
//! 2. [`cache`]: pseudo-label the unlabeled training set, keep the top-K most
//!    confident rows per class, then the N most central of those, as a
//!    key-value feature cache.
//! 3. [`msm`]: weight each cache entry by feature and semantic similarity to
//!    a test row and add the resulting class scores to the zero-shot
//!    probabilities.
//! 4. [`adapter`]: optionally train residual MLP adapters on the fixed
//!    pseudo-labels with a masked cross-entropy and a marginal-entropy loss.
//!
//! [`eval`] and [`synthetic`] provide accuracy reports, ablation tables and
//! planted-cluster fixtures; [`cli`] backs the `tfup` binary.

mod binio;

pub mod adapter;
pub mod cache;
pub mod cli;
pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod msm;
pub mod synthetic;
pub mod zeroshot;

pub use cache::{build_cache, load_cache, save_cache, CacheModel};
pub use config::{LogitScale, RunConfig, TrainConfig};
pub use embedding::{l2_normalize, load_embeddings, save_embeddings, EmbeddingMatrix};
pub use error::{Error, Result};
pub use msm::tfup_classify;
pub use zeroshot::{zero_shot_classify, PredictionBatch};
