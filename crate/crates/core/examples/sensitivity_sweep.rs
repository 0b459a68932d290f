//! Accuracy over a grid of image and text residual ratios.
//!
//! ```bash
//! cargo run --release -p tfup --example sensitivity_sweep
//! ```

use tfup::eval::{sweep, EvalData, SweepGrid};
use tfup::synthetic::{generate_synthetic, SyntheticSpec};
use tfup::RunConfig;

fn main() -> tfup::Result<()> {
    let fx = generate_synthetic(&SyntheticSpec::default())?;
    let mut cfg = RunConfig::default();
    cfg.train.epochs = 3;
    let grid = SweepGrid {
        alphas: vec![0.0, 0.2, 0.5, 0.8],
        betas: vec![0.0, 0.5],
        ..SweepGrid::default()
    };
    for r in sweep(&EvalData::from(&fx), &cfg, &grid)? {
        println!("{r}");
    }
    Ok(())
}
