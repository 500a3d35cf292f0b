//! Empirical measures approaching their law: median W1 distance to a large
//! reference sample as the sample size grows.
//!
//! `cargo run --example glivenko_cantelli`

use mfflsim::meanfield::{gc_diagnostic, sample_measure, wasserstein1_1d, EmpiricalMeasure};
use mfflsim::rng::StreamRng;
use rand::Rng;

fn main() -> mfflsim::Result<()> {
    let a = EmpiricalMeasure::from_scalars(&[0.0, 1.0, 3.0])?;
    let b = EmpiricalMeasure::from_scalars(&[1.0, 2.0, 3.0])?;
    println!("W1 of two small samples: {}", wasserstein1_1d(&a, &b)?);

    let exponential = |r: &mut StreamRng| -(1.0 - r.random::<f64>()).ln();
    let reference = sample_measure(&exponential, 200_000, 5, u64::MAX)?;
    for row in gc_diagnostic(&[10, 30, 100, 300, 1000, 3000], &reference, &exponential, 25, 5)? {
        println!("p = {:>5}: median W1 {:.4}", row.p, row.median_w1);
    }
    Ok(())
}
