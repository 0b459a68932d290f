//! Pseudo-labels, the confidence filter, the prototype filter, and the
//! resulting cache, step by step.
//!
//! ```bash
//! cargo run -p tfup --example build_cache
//! ```

use tfup::cache::{confidence_filter, prototype_filter, prototype_score, pseudo_label};
use tfup::synthetic::{generate_synthetic, SyntheticSpec};
use tfup::{build_cache, save_cache, load_cache, zero_shot_classify, RunConfig};

fn main() -> tfup::Result<()> {
    let fx = generate_synthetic(&SyntheticSpec::default())?;
    let cfg = RunConfig::default();

    let zs = zero_shot_classify(&fx.train, &fx.text, cfg.logit_scale)?;
    let pl = pseudo_label(zs.probs.view());
    let confident = confidence_filter(&pl, cfg.k);
    let class0 = fx.train.select(&confident[0]);
    let scores = prototype_score(class0.data());
    let keep = prototype_filter(&scores, cfg.n);
    println!("class 0: {} pseudo-labelled, {} confident, prototypes {:?}", pl.by_class[0].len(), confident[0].len(),
        keep.iter().map(|&i| class0.ids()[i].as_str()).collect::<Vec<_>>());

    let cache = build_cache(&fx.train, &fx.text, &cfg)?;
    print!("{}", cache.summary());
    let path = std::env::temp_dir().join("tfup-example.tfc");
    save_cache(&cache, &path)?;
    println!("reloaded {} entries from {}", load_cache(&path)?.len(), path.display());
    Ok(())
}
