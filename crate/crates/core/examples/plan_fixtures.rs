//! Plan the two hand-built fixtures with every planner and print the
//! resulting shot counts and resource usage.

use gsdist::fixtures::{example_one, example_two};
use gsdist::model::compute_metrics;
use gsdist::p2pgsd::MemoryStrategyKind;
use gsdist::protocol::Planner;
use gsdist::stp2pgsd::StParams;
use gsdist::validate::is_valid_solution;

fn main() -> gsdist::Result<()> {
    let planners = [
        Planner::Mgst,
        Planner::P2p { mem: MemoryStrategyKind::Minimum },
        Planner::P2p { mem: MemoryStrategyKind::Standard },
        Planner::P2p { mem: MemoryStrategyKind::Maximum },
        Planner::StP2p { params: StParams::default() },
        Planner::StP2p { params: StParams::factor(1.0) },
    ];
    for (name, task) in [("example one", example_one(1.0)), ("example two", example_two(1.0))] {
        println!("{name}");
        for p in planners {
            let sol = p.plan(&task)?;
            let m = compute_metrics(&sol, &task.network)?;
            let ok = is_valid_solution(&sol, &task)?.valid;
            println!(
                "  {:<9} {:<8} {:<8} shots={} bell={} mem={} valid={ok}",
                p.name(),
                p.mem_name(),
                p.variant_name(),
                m.shots,
                m.bell_pairs,
                m.cum_memory
            );
        }
    }
    Ok(())
}
