//! Component, filter and similarity-measure ablations on a synthetic fixture.
//!
//! ```bash
//! cargo run --release -p tfup --example ablation
//! ```

use tfup::eval::{ablation_suite, EvalData};
use tfup::synthetic::{generate_synthetic, SyntheticSpec};
use tfup::RunConfig;

fn main() -> tfup::Result<()> {
    let fixture = generate_synthetic(&SyntheticSpec::default())?;
    let cfg = RunConfig::default();
    let reports = ablation_suite(&EvalData::from(&fixture), &cfg)?;
    for r in &reports {
        println!("{r}");
    }
    Ok(())
}
