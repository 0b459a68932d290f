//! Writing and reading TFB embedding files and the dataset manifest.
//!
//! ```bash
//! cargo run -p tfup --example embedding_io
//! ```

use tfup::embedding::{load_normalized, validate_manifest, DatasetManifest};
use tfup::synthetic::{generate_synthetic, SyntheticSpec};
use tfup::{load_embeddings, save_embeddings};

fn main() -> tfup::Result<()> {
    let fx = generate_synthetic(&SyntheticSpec {
        train_per_class: 5,
        test_per_class: 2,
        ..SyntheticSpec::default()
    })?;
    let dir = std::env::temp_dir().join("tfup-embedding-io");
    std::fs::create_dir_all(&dir).map_err(|e| tfup::Error::Data(e.to_string()))?;

    let path = dir.join("test.tfb");
    save_embeddings(&fx.test, &path)?;
    let bytes = std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0);
    let back = load_embeddings(&path)?;
    println!("{}: {} x {} ({bytes} bytes)", path.display(), back.rows(), back.dim());
    println!("max |norm - 1| after reload: {:.2e}", back.max_norm_deviation());
    println!("canonicalized: {:.2e}", load_normalized(&path)?.max_norm_deviation());

    fx.manifest.save(dir.join("manifest.csv"), dir.join("classes.txt"))?;
    let manifest = DatasetManifest::load(dir.join("manifest.csv"), dir.join("classes.txt"))?;
    let complete = validate_manifest(&manifest, &[&fx.train, &back]);
    let test_only = validate_manifest(&manifest, &[&back]);
    println!(
        "manifest: {} records, {} classes; {} issues against train+test, {} against test alone",
        manifest.entries.len(),
        manifest.num_classes(),
        complete.issues.len(),
        test_only.issues.len()
    );
    if let Some(first) = test_only.issues.first() {
        println!("  e.g. {first}");
    }
    Ok(())
}
