//! Estimate the local function of the identity map on a 3x2 grid and check
//! that the automaton leaves a product state untouched.

use std::sync::Arc;

use cpa::automaton::{Automaton, Boundary};
use cpa::densities::{Interval, SparseDensity};
use cpa::models::IdentityFlow;
use cpa::partition::{CellPartition, DomainBox, UniformPartition};
use cpa::translator::{estimate_f0, FlowMap};

fn main() -> cpa::Result<()> {
    let partition = Arc::new(UniformPartition::new(DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0])?, vec![3, 2])?);
    let flow: Arc<dyn FlowMap> = Arc::new(IdentityFlow::new(2));
    let (table, stats) = estimate_f0(flow, partition.clone(), Interval::single(0), &[8], 5)?;
    println!("{} rows, {} image points, clamp rate {:.1e}", table.explored_rows(), stats.image_points, stats.clamp_rate());
    for (code, row) in table.rows() {
        println!("  {:?} -> {:?}", partition.multi_index(cpa::partition::Symbol(code as usize))?, row);
    }

    let base = partition.num_symbols();
    let automaton = Automaton::new(
        4,
        Arc::new(table),
        Boundary::Deterministic {
            left: vec![],
            right: vec![],
        },
    )?;
    let sites: Vec<SparseDensity> = (0..4)
        .map(|k| SparseDensity::from_weights(Interval::single(0), base, [(k % base as u64, 0.4), ((k + 2) % base as u64, 0.6)]))
        .collect::<cpa::Result<_>>()?;
    let g0 = automaton.product_state(&sites)?;
    let traj = automaton.evolve(&g0, 10, 0.0)?;
    println!("max change after 10 steps: {:.1e}", traj.states[10].max_l1_distance(&g0)?);
    Ok(())
}
