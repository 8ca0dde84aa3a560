//! Upwind advection fed by a random inflow: each step the left boundary
//! cell is drawn independently from a fixed density. Prints the mean cell
//! index per site as the inflow spreads down the pipe.

use std::sync::Arc;

use cpa::automaton::{Automaton, Boundary};
use cpa::densities::{Interval, SparseDensity};
use cpa::models::LinearAdvection;
use cpa::partition::{CellPartition, UniformPartition};
use cpa::translator::{estimate_f0, FlowMap};

fn main() -> cpa::Result<()> {
    let m = 8;
    let flow: Arc<dyn FlowMap> = Arc::new(LinearAdvection::new(1.0, 1.0, 0.5)?);
    let partition = Arc::new(UniformPartition::unit_interval(4)?);
    let base = partition.num_symbols();
    let (table, _) = estimate_f0(flow, partition, Interval::single(0), &[40, 40], 1)?;

    let inflow = SparseDensity::from_weights(Interval::single(1), base, [(0, 0.5), (3, 0.5)])?;
    let automaton = Automaton::new(
        m,
        Arc::new(table),
        Boundary::WhiteNoise {
            left: inflow,
            right: SparseDensity::point(Interval::empty_at(m as i64 + 1), base, 0)?,
        },
    )?;
    let (left, _) = automaton.boundary_densities(0);
    println!("boundary sites K_l = {:?}", left.window());

    let sites = automaton.grid().sites();
    let empty = SparseDensity::point(Interval::single(0), base, 0)?;
    let g0 = automaton.product_state(&vec![empty; sites.len()])?;
    let traj = automaton.evolve(&g0, 40, 1e-6)?;
    for n in [0, 5, 10, 20, 40] {
        let row: Vec<String> = traj.states[n]
            .site_marginals()
            .iter()
            .map(|d| {
                let mean: f64 = d.iter().map(|(c, p)| c as f64 * p).sum();
                format!("{mean:.2}")
            })
            .collect();
        println!("step {n:>2}: mean cell per site {}", row.join(" "));
    }
    Ok(())
}
