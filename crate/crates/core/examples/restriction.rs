//! Piecewise-constant restriction of a truncated normal density on [0,1].

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use cpa::oracle::restriction_l1_error;
use cpa::partition::UniformPartition;

fn main() -> cpa::Result<()> {
    let normal = Normal::new(0.5, 0.15).expect("valid parameters");
    let mass = normal.cdf(1.0) - normal.cdf(0.0);
    let g = move |x: &[f64]| normal.pdf(x[0]) / mass;
    for cells in [5usize, 10, 20, 40, 80] {
        let err = restriction_l1_error(&UniformPartition::unit_interval(cells)?, 1, &g, 256)?;
        println!("{cells:>3} cells: L1(R(g), g) = {err:.5}");
    }
    Ok(())
}
