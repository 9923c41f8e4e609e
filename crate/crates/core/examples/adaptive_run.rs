//! Run the adaptive protocol on a random instance with lossy channels and
//! print a per-shot summary.

use gsdist::cli::make_instance;
use gsdist::graphs::TopologyParams;
use gsdist::p2pgsd::MemoryStrategyKind;
use gsdist::protocol::{run_adaptive, Planner, ProtocolConfig};

fn main() -> gsdist::Result<()> {
    let topo = TopologyParams { n_nodes: 16, ..Default::default() };
    let task = make_instance(&topo, "tree", 8, Some(0.7), false, 42).expect("instance");
    let cfg = ProtocolConfig { st_eum: true, ..Default::default() };
    let tr = run_adaptive(&task, Planner::P2p { mem: MemoryStrategyKind::Standard }, cfg, 7)?;
    for s in &tr.shots {
        println!(
            "shot {:>2}: paths={} recovered={} completed={} saved={} bell={} mem={}",
            s.shot,
            s.planned_paths,
            s.recovered,
            s.completed.len(),
            s.saved.len(),
            s.bell_pairs,
            s.memory
        );
    }
    println!("{} after {} shots, {:?}", tr.status.name(), tr.metrics.shots, tr.metrics);
    Ok(())
}
