//! Adapter training on fixed pseudo-labels, then classification with and
//! without the cache term.
//!
//! ```bash
//! cargo run --release -p tfup --example train_adapters
//! ```

use tfup::adapter::{save_checkpoint, tfupt_classify, train, Checkpoint};
use tfup::config::{OptimizerKind, TfuptMode};
use tfup::synthetic::{generate_synthetic, SyntheticSpec};
use tfup::{build_cache, RunConfig};

fn main() -> tfup::Result<()> {
    let fx = generate_synthetic(&SyntheticSpec::default())?;
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 5;
    let cache = build_cache(&fx.train, &fx.text, &cfg)?;

    for optimizer in [OptimizerKind::Sgd, OptimizerKind::Adam] {
        let mut c = cfg.clone();
        c.train.optimizer = optimizer;
        if optimizer == OptimizerKind::Adam {
            c.train.learning_rate = 1e-3;
        }
        let (params, report) = train(&fx.train, &fx.text, &cache, &c)?;
        println!("{optimizer:?}: pseudo-label agreement {:.4} at init", report.initial_pseudo_accuracy);
        for e in &report.epochs {
            println!(
                "  epoch {}: ce {:.4}  md {:.4}  masked {:.3}  agreement {:.4}",
                e.epoch, e.ce_loss, e.md_loss, e.mask_fraction, e.pseudo_accuracy
            );
        }
        for mode in [TfuptMode::Adapter, TfuptMode::AdapterCache] {
            let p = tfupt_classify(&fx.test, &params, &fx.text, &cache, &c, mode)?;
            let hits = p.labels.iter().zip(&fx.test_labels).filter(|(a, b)| a == b).count();
            println!("  {mode}: test accuracy {:.4}", hits as f64 / p.len() as f64);
        }
        let path = std::env::temp_dir().join(format!("tfup-{optimizer:?}.tfa"));
        save_checkpoint(&Checkpoint { params, seed: c.train.seed, epoch: c.train.epochs }, &path)?;
    }
    Ok(())
}
