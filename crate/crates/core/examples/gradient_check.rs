//! Compares the analytic adapter gradient with central finite differences on
//! one small instance.
//!
//! ```bash
//! cargo run -p tfup --example gradient_check
//! ```

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfup::adapter::{batch_loss, loss_and_gradients, AdapterParams, Mlp};
use tfup::TrainConfig;

fn random_mlp(rng: &mut ChaCha8Rng, d: usize, h: usize) -> Mlp {
    let mut m = Mlp::zeros(d, h);
    m.w1.mapv_inplace(|_| rng.random_range(-0.8..0.8));
    m.b1.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    m.w2.mapv_inplace(|_| rng.random_range(-0.8..0.8));
    m.b2.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    m
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Array2<f64> {
    let mut m = Array2::<f64>::from_shape_fn((rows, d), |_| rng.random_range(-1.0..1.0));
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

fn main() -> tfup::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (d, h) = (6, 3);
    let params = AdapterParams::new(random_mlp(&mut rng, d, h), random_mlp(&mut rng, d, h), 0.2, 0.5)?;
    let x = unit_rows(&mut rng, 4, d);
    let t = unit_rows(&mut rng, 3, d);
    let pseudo = [0, 2, 1, 1];
    let cfg = TrainConfig { theta: 0.5, ..TrainConfig::default() };
    let scale = 10.0;

    let (parts, g) = loss_and_gradients(&params, x.view(), t.view(), &pseudo, scale, &cfg)?;
    println!("loss: ce {:.6}  md {:.6}  ({} of 4 rows masked in)", parts.ce, parts.md, parts.masked);
    let step = 1e-5;
    println!("text W2 row 0:");
    for j in 0..d {
        let mut plus = params.clone();
        plus.text.w2[[0, j]] += step;
        let mut minus = params.clone();
        minus.text.w2[[0, j]] -= step;
        let fd = (batch_loss(&plus, x.view(), t.view(), &pseudo, scale, &cfg)?.total
            - batch_loss(&minus, x.view(), t.view(), &pseudo, scale, &cfg)?.total)
            / (2.0 * step);
        println!("  [{j}] analytic {:+.8e}  finite-diff {:+.8e}", g.text.w2[[0, j]], fd);
    }
    Ok(())
}
