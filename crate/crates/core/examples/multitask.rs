//! Two tasks sharing a bottleneck: the second plans on what the first leaves.

use gsdist::model::{Assignment, Channel, DistributionTask, GraphState, Network};
use gsdist::p2pgsd::MemoryStrategyKind;
use gsdist::protocol::{run_adaptive, run_multitask, Planner, ProtocolConfig};

fn main() -> gsdist::Result<()> {
    // 0 - 2 - 3 - 1, plus 4 - 2 and 3 - 5; the 2 - 3 link has width 1.
    let chans = vec![
        Channel::new(0, 2, 1, 0.8),
        Channel::new(2, 3, 1, 0.8),
        Channel::new(3, 1, 1, 0.8),
        Channel::new(4, 2, 1, 0.8),
        Channel::new(3, 5, 1, 0.8),
    ];
    let net = Network::simple(6, chans)?;
    let pair = GraphState::on(2, &[(0, 1)])?;
    let a = DistributionTask::new(net.clone(), pair.clone(), Assignment::from_slice(&[0, 1]))?;
    let b = DistributionTask::new(net, pair, Assignment::from_slice(&[4, 5]))?;
    let planner = Planner::P2p { mem: MemoryStrategyKind::Standard };
    let cfg = ProtocolConfig::no_recovery();
    let (mut solo, mut shared) = (0, 0);
    let n = 500;
    for seed in 0..n {
        solo += run_adaptive(&b, planner, cfg, gsdist::protocol::task_seed(seed, 1))?.metrics.shots;
        shared += run_multitask(&[a.clone(), b.clone()], planner, cfg, seed)?[1].metrics.shots;
    }
    println!("second task alone: {:.2} shots", solo as f64 / n as f64);
    println!("second task behind the first: {:.2} shots", shared as f64 / n as f64);
    Ok(())
}
