//! Exhaustive stabilizer checks of CZ-layer teleportation and fusion.

use gsdist::model::GraphState;
use gsdist::stabilizer::{connected_graph_classes, graph_state_tableau, verify_cz_layer_teleport, verify_fusion};

fn main() -> gsdist::Result<()> {
    for n in 1..=5 {
        let classes = connected_graph_classes(n);
        let ok = classes.iter().map(verify_cz_layer_teleport).collect::<gsdist::Result<Vec<_>>>()?;
        println!("{n} vertices: {}/{} classes teleport correctly", ok.iter().filter(|&&b| b).count(), ok.len());
    }
    let star = GraphState::on(3, &[(0, 1), (0, 2)])?;
    println!("3-star + 3-star fusion: {}", verify_fusion(&star, &star, 0, 0)?);
    let tri = graph_state_tableau(&GraphState::on(3, &[(0, 1), (1, 2), (0, 2)])?);
    for (x, z, neg) in tri.canonical() {
        let s: String = x
            .iter()
            .zip(&z)
            .map(|(&x, &z)| match (x, z) {
                (false, false) => 'I',
                (true, false) => 'X',
                (false, true) => 'Z',
                (true, true) => 'Y',
            })
            .collect();
        println!("{}{s}", if neg { '-' } else { '+' });
    }
    Ok(())
}
