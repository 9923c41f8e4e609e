//! Brute-force minimum shot counts against the floor(|V_S|/2) bound.

use gsdist::model::{Assignment, Channel, DistributionTask, GraphState, Network};
use gsdist::validate::{brute_force_min_shots, check_upper_bound};

fn main() -> gsdist::Result<()> {
    // Four terminals behind one width-1 channel: two Bell pairs across it.
    let chans = vec![
        Channel::new(0, 2, 1, 1.0),
        Channel::new(1, 2, 1, 1.0),
        Channel::new(2, 3, 1, 1.0),
        Channel::new(3, 4, 1, 1.0),
        Channel::new(3, 5, 1, 1.0),
    ];
    let net = Network::simple(6, chans)?;
    let gs = GraphState::on(4, &[(0, 2), (1, 3)])?;
    let task = DistributionTask::new(net, gs, Assignment::from_slice(&[0, 1, 4, 5]))?;
    println!("bottleneck: oracle = {:?}, bound holds = {}", brute_force_min_shots(&task, 3)?, check_upper_bound(&task)?);
    let ex2 = gsdist::fixtures::example_two(1.0);
    println!("example two: oracle = {:?}", brute_force_min_shots(&ex2, 3)?);
    Ok(())
}
