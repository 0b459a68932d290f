//! Planted-cluster embedding fixtures that stand in for encoder output.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{DatasetManifest, EmbeddingMatrix, ManifestEntry, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Std-dev of the isotropic Gaussian added to a unit class centre.
    pub sigma: f64,
    /// Std-dev of the Gaussian added to a centre to form its text feature.
    pub text_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 8,
            dim: 64,
            train_per_class: 200,
            test_per_class: 100,
            sigma: 0.6,
            text_noise: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim < 2 {
            return Err(Error::Config(format!(
                "synthetic fixture needs C >= 2 and d >= 2 (got C={}, d={})",
                self.classes, self.dim
            )));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite())
            || !(self.text_noise >= 0.0 && self.text_noise.is_finite())
        {
            return Err(Error::Config("sigma and text noise must be >= 0".into()));
        }
        Ok(())
    }
}

/// Generated train/test/text features with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub train: EmbeddingMatrix,
    pub test: EmbeddingMatrix,
    pub text: EmbeddingMatrix,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    pub manifest: DatasetManifest,
}

impl Fixture {
    pub fn num_classes(&self) -> usize {
        self.text.rows()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_iter((0..d).map(|_| StandardNormal.sample(rng)))
}

fn unit(v: Array1<f64>) -> Array1<f64> {
    let n = v.dot(&v).sqrt();
    v / n
}

fn noisy(rng: &mut ChaCha8Rng, center: &Array1<f64>, std: f64) -> Array1<f64> {
    if std == 0.0 {
        return center.clone();
    }
    unit(center + &(gaussian(rng, center.len()) * std))
}

fn stack(rows: &[Array1<f64>], d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), d));
    for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
        dst.assign(src);
    }
    out
}

/// Draws `C` unit centres, one text feature per centre, then the train and
/// test samples class by class. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Fixture> {
    spec.validate()?;
    let (c, d) = (spec.classes, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Array1<f64>> = (0..c).map(|_| unit(gaussian(&mut rng, d))).collect();
    let text_rows: Vec<Array1<f64>> = centers
        .iter()
        .map(|ctr| noisy(&mut rng, ctr, spec.text_noise))
        .collect();

    let mut draw = |per_class: usize| {
        let mut rows = Vec::with_capacity(per_class * c);
        let mut labels = Vec::with_capacity(per_class * c);
        for (class, ctr) in centers.iter().enumerate() {
            for _ in 0..per_class {
                rows.push(noisy(&mut rng, ctr, spec.sigma));
                labels.push(class);
            }
        }
        (rows, labels)
    };
    let (train_rows, train_labels) = draw(spec.train_per_class);
    let (test_rows, test_labels) = draw(spec.test_per_class);

    let train = EmbeddingMatrix::with_prefix(stack(&train_rows, d), "train-")?;
    let test = EmbeddingMatrix::with_prefix(stack(&test_rows, d), "test-")?;
    let class_names: Vec<String> = (0..c).map(|i| format!("class_{i}")).collect();
    let text = EmbeddingMatrix::new(stack(&text_rows, d), class_names.clone())?;

    let mut entries = Vec::with_capacity(train.rows() + test.rows());
    for (id, _) in train.ids().iter().zip(&train_labels) {
        entries.push(ManifestEntry {
            sample_id: id.clone(),
            split: Split::Train,
            class_index: None,
        });
    }
    for (id, &l) in test.ids().iter().zip(&test_labels) {
        entries.push(ManifestEntry {
            sample_id: id.clone(),
            split: Split::Test,
            class_index: Some(l),
        });
    }
    Ok(Fixture {
        train,
        test,
        text,
        train_labels,
        test_labels,
        manifest: DatasetManifest {
            entries,
            class_names,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::LogitScale;
    use crate::embedding::validate_manifest;
    use crate::zeroshot::zero_shot_classify;

    fn accuracy(fx: &Fixture) -> f64 {
        let p = zero_shot_classify(&fx.test, &fx.text, LogitScale::CLIP).unwrap();
        let hits = p.labels.iter().zip(&fx.test_labels).filter(|(a, b)| a == b).count();
        hits as f64 / fx.test_labels.len() as f64
    }

    #[test]
    fn degenerate_clusters_are_perfect() {
        let spec = SyntheticSpec {
            sigma: 0.0,
            text_noise: 0.0,
            train_per_class: 3,
            test_per_class: 3,
            ..SyntheticSpec::default()
        };
        let fx = generate_synthetic(&spec).unwrap();
        for (i, &l) in fx.train_labels.iter().enumerate() {
            assert_eq!(fx.train.row(i), fx.text.row(l));
        }
        assert_eq!(accuracy(&fx), 1.0);
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = SyntheticSpec {
            train_per_class: 5,
            test_per_class: 5,
            ..SyntheticSpec::default()
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..spec.clone() };
        assert_ne!(generate_synthetic(&spec).unwrap().train, generate_synthetic(&other).unwrap().train);
    }

    #[test]
    fn default_fixture_is_above_chance_but_imperfect() {
        let fx = generate_synthetic(&SyntheticSpec::default()).unwrap();
        let acc = accuracy(&fx);
        assert!(acc > 1.0 / 8.0 && acc < 1.0, "accuracy {acc}");
        assert!(fx.train.max_norm_deviation() < 1e-12);
        assert!(validate_manifest(&fx.manifest, &[&fx.train, &fx.test]).is_empty());
    }

    #[test]
    fn invalid_spec() {
        let spec = SyntheticSpec {
            classes: 1,
            ..SyntheticSpec::default()
        };
        assert!(generate_synthetic(&spec).is_err());
    }
}
