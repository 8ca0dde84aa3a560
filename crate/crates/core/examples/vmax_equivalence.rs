//! With a pattern window as wide as the automaton, the CPA step equals the
//! global Perron-Frobenius step on the same test points.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cpa::automaton::{Automaton, Boundary};
use cpa::densities::{Interval, SparseDensity};
use cpa::models::AveragingFlow;
use cpa::oracle::{apply_pb, build_pb};
use cpa::partition::UniformPartition;
use cpa::translator::{estimate_f0, FlowMap};

fn main() -> cpa::Result<()> {
    let flow: Arc<dyn FlowMap> = Arc::new(AveragingFlow);
    let partition = Arc::new(UniformPartition::unit_interval(4)?);
    let counts = [12, 12, 12];
    let (table, _) = estimate_f0(flow.clone(), partition.clone(), Interval::new(0, 1)?, &counts, 3)?;
    let pb = build_pb(flow.as_ref(), partition.as_ref(), 3, &counts, 3, None)?;
    let table = Arc::new(table);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for rho in 0..4usize {
        let automaton = Automaton::new(
            3,
            table.clone(),
            Boundary::Deterministic {
                left: vec![],
                right: vec![rho],
            },
        )?;
        let weights: Vec<(u64, f64)> = (0..16u64).map(|c| (c * 4 + rho as u64, rng.gen::<f64>())).collect();
        let g = SparseDensity::from_weights(Interval::new(1, 3)?, 4, weights)?.normalize()?;
        let mut state = automaton.hat_beta(&g)?;
        state.sites = automaton.step(&state.sites, 1)?;
        let cpa = automaton.hat_alpha(&state)?;
        let exact = apply_pb(&pb, &g)?;
        println!("x_4 in cell {rho}: L1(cpa, P_B g) = {:.2e}", cpa.l1_distance(&exact)?);
    }
    Ok(())
}
