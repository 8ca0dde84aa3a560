//! The averaging map x_i <- (x_i + x_{i+1}) / 3.75 on five cells of [0,1].
//!
//! Starting from the cell pattern (4,4,2,2), one step of the automaton gives
//! positive probability to (2,2,0,2). The global map can never produce it:
//! sites 2 and 3 share the point x_3, and no x_3 sends both to their cells.

use std::sync::Arc;

use cpa::automaton::{Automaton, Boundary};
use cpa::densities::{decode_symbols, encode_symbols, Interval, SparseDensity};
use cpa::models::AveragingFlow;
use cpa::oracle::build_pb;
use cpa::translator::{estimate_f0, FlowMap};

fn main() -> cpa::Result<()> {
    let flow: Arc<dyn FlowMap> = Arc::new(AveragingFlow);
    let partition = Arc::new(AveragingFlow::partition());
    let (table, _) = estimate_f0(flow.clone(), partition.clone(), Interval::new(0, 1)?, &[60, 60, 60], 5)?;
    let automaton = Automaton::new(
        4,
        Arc::new(table),
        Boundary::Deterministic {
            left: vec![],
            right: vec![2],
        },
    )?;

    let chi = encode_symbols(5, &[4, 4, 2, 2]);
    let psi = encode_symbols(5, &[2, 2, 0, 2]);
    let mut state = automaton.hat_beta(&SparseDensity::point(Interval::new(1, 4)?, 5, chi)?)?;
    state.sites = automaton.step(&state.sites, 1)?;
    let cpa = automaton.hat_alpha(&state)?;

    let pb = build_pb(flow.as_ref(), partition.as_ref(), 4, &[47, 47, 47, 1], 5, Some(&[chi]))?;
    let exact = pb.row(chi).unwrap_or(&[]);

    println!("{:<14} {:>10} {:>10}", "pattern", "cpa", "global");
    let mut codes: Vec<u64> = cpa.support().chain(exact.iter().map(|(c, _)| *c)).collect();
    codes.sort_unstable();
    codes.dedup();
    for code in codes {
        let global = exact.iter().find(|(c, _)| *c == code).map_or(0.0, |(_, p)| *p);
        let mark = if code == psi { "  <-" } else { "" };
        println!("{:<14} {:>10.3e} {:>10.3e}{mark}", format!("{:?}", decode_symbols(5, 4, code)), cpa.get(code), global);
    }
    Ok(())
}
