//! Arsenate transport with Langmuir adsorption in a pipe of seven segments.
//! Compares the consumer's dissolved-arsenate marginal from the automaton
//! with a Monte Carlo reference on the fine characteristic grid.
//!
//! Usage: `cargo run --release --example arsenate_pipe -- [runs] [a_cells]`

use std::sync::Arc;
use std::time::Instant;

use cpa::automaton::{Automaton, Boundary};
use cpa::densities::{Interval, SparseDensity};
use cpa::models::{ArsenateFlow, ArsenateParams, ArsenatePipe};
use cpa::oracle::{mc_reference, sample_points, McSetup};
use cpa::partition::{CellPartition, Symbol, UniformPartition};
use cpa::translator::{FlowMap, LazyLocalFunction};

const SITES: usize = 7;
const STEPS: usize = 144;

fn d_marginal(density: &SparseDensity, partition: &dyn CellPartition) -> cpa::Result<Vec<f64>> {
    let mut out = vec![0.0; partition.cells_per_dim()[0]];
    for (code, p) in density.iter() {
        out[partition.multi_index(Symbol(code as usize))?[0]] += p;
    }
    Ok(out)
}

fn main() -> cpa::Result<()> {
    let mut args = std::env::args().skip(1);
    let runs: u64 = args.next().map_or(500, |a| a.parse().expect("runs must be an integer"));
    let a_cells: usize = args.next().map_or(5, |a| a.parse().expect("a_cells must be an integer"));

    let params = ArsenateParams::default();
    let partition = Arc::new(UniformPartition::new(params.domain(), vec![5, a_cells])?);
    let source = params.tank_source(partition.as_ref(), &[2, 3, 4])?;
    let base = partition.num_symbols();

    let start = Instant::now();
    let flow: Arc<dyn FlowMap> = Arc::new(ArsenateFlow::new(params.clone())?);
    let f0 = Arc::new(LazyLocalFunction::new(flow, partition.clone(), Interval::single(0), &[37, 75], 0)?);
    let automaton = Automaton::new(
        SITES,
        f0.clone(),
        Boundary::WhiteNoise {
            left: source.clone(),
            right: SparseDensity::point(Interval::empty_at(SITES as i64 + 1), base, 0)?,
        },
    )?;
    let empty = SparseDensity::point(Interval::single(0), base, 0)?;
    let g0 = automaton.product_state(&vec![empty; SITES - 1])?;
    let traj = automaton.evolve(&g0, STEPS, 5e-5)?;
    let consumer = traj.states[STEPS].at(SITES as i64).marginal(&Interval::single(0))?;
    let cpa = d_marginal(&consumer, partition.as_ref())?;
    println!("cpa 5x{a_cells}: {cpa:.3?} ({} table rows, {:.1?})", f0.estimated_rows(), start.elapsed());

    let start = Instant::now();
    let pipe = ArsenatePipe::new(&params, SITES)?;
    let initial = |_: &mut dyn rand::RngCore| Ok(vec![vec![0.0, 0.0]; SITES]);
    let boundary = |rng: &mut dyn rand::RngCore, _: usize| Ok((sample_points(partition.as_ref(), &source, rng)?, vec![]));
    let setup = McSetup {
        first_run: 0,
        runs,
        steps: STEPS,
        seed: 7,
        report_steps: vec![STEPS],
        partitions: vec![partition.as_ref()],
    };
    let report = mc_reference(&pipe, &initial, &boundary, &setup)?;
    let mc = d_marginal(&report.density(0, 0, SITES)?, partition.as_ref())?;
    println!("mc {runs} runs: {mc:.3?} ({:.1?})", start.elapsed());
    let l1: f64 = cpa.iter().zip(&mc).map(|(a, b)| (a - b).abs()).sum();
    println!("L1 = {l1:.3}");
    Ok(())
}
