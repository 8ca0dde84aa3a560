//! Compose a one-site local function over a wider pattern window, save it
//! in both table formats and read it back.

use std::sync::Arc;

use cpa::densities::Interval;
use cpa::models::AveragingFlow;
use cpa::translator::{compose_f0, estimate_f0, load_f0, save_f0, FlowMap};

fn main() -> cpa::Result<()> {
    let flow: Arc<dyn FlowMap> = Arc::new(AveragingFlow);
    let partition = Arc::new(AveragingFlow::partition());
    let (table, _) = estimate_f0(flow, partition, Interval::single(0), &[20, 20], 10)?;
    println!("f0: U = {:?}, {} rows", table.neighborhood(), table.explored_rows());

    for w in [Interval::single(0), Interval::new(0, 1)?, Interval::new(0, 2)?] {
        let composed = compose_f0(&table, w)?;
        println!(
            "W = {w:?}: preimage window {:?}, {} of {} rows explored, composed_over {:?}",
            composed.preimage_window(),
            composed.explored_rows(),
            composed.num_rows(),
            composed.header().composed_over
        );
    }

    let dir = std::env::temp_dir().join("cpa-composition-example");
    std::fs::create_dir_all(&dir)?;
    let composed = compose_f0(&table, Interval::new(0, 1)?)?;
    for name in ["f0w.cpa", "f0w.json"] {
        let path = dir.join(name);
        save_f0(&composed, &path)?;
        let back = load_f0(&path)?;
        println!("{}: {} bytes, reloads equal: {}", path.display(), std::fs::metadata(&path)?.len(), back == composed);
    }
    Ok(())
}
