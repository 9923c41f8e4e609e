//! MGST on example one: the smallest shot count reachable from each root.

use gsdist::fixtures::example_one;
use gsdist::mgst::{mgst_memory, mgst_plan, try_k};

fn main() -> gsdist::Result<()> {
    let task = example_one(1.0);
    for root in 0..task.network.n_nodes() {
        let k = (1..=4).find(|&k| matches!(try_k(&task, root, k), Ok(Some(_))));
        match k {
            Some(k) => println!("root {root}: k={k} memory={}", mgst_memory(k, &task, root)),
            None => println!("root {root}: infeasible within 4 shots"),
        }
    }
    let best = mgst_plan(&task)?;
    println!("chosen root {} with k={}", best.root, best.k);
    Ok(())
}
