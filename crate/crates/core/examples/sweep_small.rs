//! A tiny sweep printed as CSV, with the per-cell aggregate.

use gsdist::cli::{aggregate, sweep, write_csv, SweepConfig};

fn main() {
    let cfg = SweepConfig {
        experiment_id: "demo".into(),
        samples: 4,
        sizes: vec![6, 10],
        planners: vec!["mgst".into(), "p2p-standard".into()],
        probs: vec![0.8],
        record_runtime: false,
        ..Default::default()
    };
    let rows = sweep(&cfg).expect("sweep runs");
    write_csv(&rows, std::io::stdout()).expect("stdout");
    println!();
    write_csv(&aggregate(&rows, true), std::io::stdout()).expect("stdout");
}
