//! Zero-shot classification: scaled cosine to class text features, softmax,
//! argmax.
//!
//! ```bash
//! cargo run -p tfup --example zero_shot
//! ```

use ndarray::array;
use tfup::{l2_normalize, zero_shot_classify, EmbeddingMatrix, LogitScale};

fn main() -> tfup::Result<()> {
    let text = EmbeddingMatrix::new(
        array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        vec!["cat".into(), "dog".into(), "bird".into()],
    )?;
    let images = l2_normalize(&EmbeddingMatrix::with_prefix(
        array![[0.9, 0.3, 0.1], [0.2, 0.2, 0.95], [0.5, 0.5, 0.0]],
        "img-",
    )?)?;

    for scale in [LogitScale::UNIT, LogitScale::CLIP] {
        println!("logit scale {}", scale.get());
        let preds = zero_shot_classify(&images, &text, scale)?;
        for (i, id) in images.ids().iter().enumerate() {
            println!(
                "  {id}: {} (p = {:.3})",
                text.ids()[preds.labels[i]],
                preds.confidence[i]
            );
        }
    }
    Ok(())
}
