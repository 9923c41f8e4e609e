//! Max flow, min-cost flow and path decomposition on a small graph.

use gsdist::flows::{flow_decomposition, max_flow, min_cost_max_flow, FlowGraph};

fn main() -> gsdist::Result<()> {
    let mut g = FlowGraph::new(6);
    for (a, b, cap, cost) in [(0, 1, 2, 1.0), (0, 2, 2, 2.0), (1, 3, 1, 1.0), (1, 4, 2, 3.0), (2, 4, 2, 1.0), (3, 5, 2, 1.0), (4, 5, 3, 1.0)] {
        g.add_arc(a, b, cap, cost);
    }
    let (value, _) = max_flow(&g, 0, 5);
    let mc = min_cost_max_flow(&g, 0, 5)?;
    println!("max flow {value}, min cost {} at value {}", mc.cost, mc.value);
    for p in flow_decomposition(&g, &mc.flow, 0, 5)? {
        let arcs: Vec<String> = p.iter().map(|&(a, _)| format!("{}->{}", g.arcs()[a].from, g.arcs()[a].to)).collect();
        println!("  {}", arcs.join(" "));
    }
    Ok(())
}
