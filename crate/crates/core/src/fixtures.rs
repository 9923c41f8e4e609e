//! Hand-built instances with known behaviour.

use crate::model::{Assignment, Channel, DistributionTask, GraphState, Network};

/// A K4 state whose four terminals each have two width-1 channels into three
/// hubs. No single node can receive four disjoint paths in one shot, yet
/// peer-to-peer routing finishes in one shot by meeting at the hubs.
///
/// Nodes 0..=3 hold vertices 0..=3; nodes 4, 5, 6 are hubs; node 7 is a leaf
/// behind hub 6.
pub fn example_one(prob: f64) -> DistributionTask {
    let links = [(0, 4), (1, 4), (2, 4), (1, 5), (2, 5), (3, 5), (0, 6), (3, 6), (6, 7)];
    let net = Network::simple(8, links.iter().map(|&(a, b)| Channel::new(a, b, 1, prob)).collect())
        .expect("fixture network is valid");
    let k4 = GraphState::on(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]).expect("K4");
    DistributionTask::new(net, k4, Assignment::from_slice(&[0, 1, 2, 3])).expect("fixture task is valid")
}

/// Six Bell pairs on two triangles joined by a width-1 bridge (nodes 0..=2
/// and 3..=5, bridge 2–3). Two of the pairs cross the bridge, so two shots
/// are needed. A two-shot plan exists only if some pair waits in memory for
/// the second shot; shot-by-shot routing needs three.
pub fn example_two(prob: f64) -> DistributionTask {
    let links = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5)];
    let net = Network::simple(6, links.iter().map(|&(a, b)| Channel::new(a, b, 1, prob)).collect())
        .expect("fixture network is valid");
    let pairs: Vec<(usize, usize)> = (0..6).map(|i| (2 * i, 2 * i + 1)).collect();
    let gs = GraphState::on(12, &pairs).expect("Bell pairs");
    let holders = [5, 2, 4, 5, 0, 2, 5, 4, 4, 5, 2, 4];
    DistributionTask::new(net, gs, Assignment::from_slice(&holders)).expect("fixture task is valid")
}
