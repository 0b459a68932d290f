//! Training-free inference: feature and semantic similarity to the cache,
//! their product, and the fused prediction.
//!
//! ```bash
//! cargo run -p tfup --example tfup_inference
//! ```

use tfup::config::SimilarityMeasure;
use tfup::msm::tfup_scores;
use tfup::synthetic::{generate_synthetic, SyntheticSpec};
use tfup::{build_cache, tfup_classify, zero_shot_classify, RunConfig};

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
}

fn main() -> tfup::Result<()> {
    let fx = generate_synthetic(&SyntheticSpec::default())?;
    let cfg = RunConfig::default();
    let cache = build_cache(&fx.train, &fx.text, &cfg)?;

    let out = tfup_scores(&fx.test, &cache, &fx.text, &cfg)?;
    let w = &out.weights;
    println!("first test row, first 4 cache entries:");
    for p in 0..4 {
        println!(
            "  entry {p} (class {}): cos {:+.3}  sem {:.4}  fused {:+.4}",
            cache.classes()[p],
            w.w_cont[[0, p]],
            w.w_sem[[0, p]],
            w.w_fsm[[0, p]]
        );
    }

    let zs = zero_shot_classify(&fx.test, &fx.text, cfg.logit_scale)?;
    println!("zero-shot   {:.4}", accuracy(&zs.labels, &fx.test_labels));
    for m in [SimilarityMeasure::Feature, SimilarityMeasure::Semantic, SimilarityMeasure::MultiLevel] {
        let c = RunConfig { similarity: m, ..cfg.clone() };
        let p = tfup_classify(&fx.test, &cache, &fx.text, &c)?;
        println!("{:<11} {:.4}", format!("{m:?}"), accuracy(&p.labels, &fx.test_labels));
    }
    Ok(())
}
