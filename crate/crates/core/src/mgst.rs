//! Centralised planner: every vertex is teleported from one root node over
//! edge-disjoint paths, found as a max flow through k copies of the network.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flows::{flow_decomposition, max_flow, FlowGraph};
use crate::model::{
    channel_success_prob, path_cost, Arc, ChannelId, DistributionTask, Hop, NodeId, PathLabel, PlannedPath, Solution,
    VertexId,
};

/// Flow graph with node layout: copy `i` of node `n` is `i·|V_N| + n`, then
/// the virtual root, one virtual end per vertex, and the ultimate end.
#[derive(Clone, Debug)]
pub struct MgstFlowGraph {
    pub graph: FlowGraph,
    pub k: usize,
    pub root: NodeId,
    pub vertices: Vec<VertexId>,
    pub n_nodes: usize,
    /// Channel carried by each arc, if any.
    pub channel_of: Vec<Option<ChannelId>>,
}

impl MgstFlowGraph {
    pub fn vroot(&self) -> usize {
        self.k * self.n_nodes
    }
    pub fn vend(&self, j: usize) -> usize {
        self.k * self.n_nodes + 1 + j
    }
    pub fn uvend(&self) -> usize {
        self.k * self.n_nodes + 1 + self.vertices.len()
    }
}

pub fn build_flow_graph(task: &DistributionTask, root: NodeId, k: usize) -> MgstFlowGraph {
    let net = &task.network;
    let nv = net.n_nodes();
    let vertices: Vec<VertexId> = task.graph_state.vertices().iter().copied().collect();
    let ns = vertices.len();
    let mut g = FlowGraph::new(k * nv + 2 + ns);
    let mut channel_of = Vec::new();
    let vroot = k * nv;
    let uvend = k * nv + 1 + ns;
    for i in 0..k {
        g.add_arc(vroot, i * nv + root, ns as i64, 0.0);
        channel_of.push(None);
    }
    for i in 0..k {
        for (ci, c) in net.channels().iter().enumerate() {
            // Saved pairs exist only in the first shot.
            if c.one_shot && i > 0 {
                continue;
            }
            g.add_edge(i * nv + c.endpoints[0], i * nv + c.endpoints[1], c.width as i64, 0.0);
            channel_of.push(Some(ci));
        }
    }
    for (j, &v) in vertices.iter().enumerate() {
        for i in 0..k {
            g.add_arc(i * nv + task.alpha(v), vroot + 1 + j, 1, 0.0);
            channel_of.push(None);
        }
        g.add_arc(vroot + 1 + j, uvend, 1, 0.0);
        channel_of.push(None);
    }
    MgstFlowGraph { graph: g, k, root, vertices, n_nodes: nv, channel_of }
}

/// Root-to-vertex channel path delivered in one shot.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub vertex: VertexId,
    pub shot: usize,
    /// From the root towards the assigned node.
    pub nodes: Vec<NodeId>,
    pub channels: Vec<ChannelId>,
}

/// Max flow through `k` copies; `Some(deliveries)` when every vertex is served.
pub fn try_k(task: &DistributionTask, root: NodeId, k: usize) -> Result<Option<Vec<Delivery>>> {
    let fg = build_flow_graph(task, root, k);
    let (value, flow) = max_flow(&fg.graph, fg.vroot(), fg.uvend());
    if value < fg.vertices.len() as i64 {
        return Ok(None);
    }
    let paths = flow_decomposition(&fg.graph, &flow, fg.vroot(), fg.uvend())?;
    let nv = fg.n_nodes;
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let mut nodes = Vec::new();
        let mut channels = Vec::new();
        let mut shot = 0;
        let mut vertex = None;
        for &(arc, fwd) in &p {
            let a = &fg.graph.arcs()[arc];
            let (from, to) = if fwd { (a.from, a.to) } else { (a.to, a.from) };
            if from == fg.vroot() {
                shot = to / nv + 1;
                nodes.push(to % nv);
            } else if to == fg.uvend() {
                vertex = Some(fg.vertices[from - fg.vroot() - 1]);
            } else if to < fg.vroot() {
                // A channel arc inside copy `shot − 1`.
                let c = fg.channel_of[arc].ok_or_else(|| Error::InvariantViolation("copy arc without a channel".into()))?;
                channels.push(c);
                nodes.push(to % nv);
            }
        }
        let vertex = vertex.ok_or_else(|| Error::InvariantViolation("flow path without a virtual end".into()))?;
        out.push(Delivery { vertex, shot, nodes, channels });
    }
    out.sort_by_key(|d| (d.shot, d.vertex));
    Ok(Some(out))
}

/// Sum of path costs with per-shot occupancy in delivery order.
pub fn estimate_cost(task: &DistributionTask, deliveries: &[Delivery]) -> f64 {
    let net = &task.network;
    let mut occ = std::collections::HashMap::new();
    let mut total = 0.0;
    for d in deliveries {
        let mut probs = Vec::with_capacity(d.channels.len());
        for &c in &d.channels {
            let o = occ.entry((d.shot, c)).or_insert(0u32);
            let ch = net.channel(c);
            probs.push(channel_success_prob(ch.prob, ch.width, (*o).min(ch.width)).unwrap_or(0.0));
            *o += 1;
        }
        total += path_cost(&probs, d.channels.len(), net.cz_prob());
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct MgstPlan {
    pub solution: Solution,
    pub root: NodeId,
    pub k: usize,
    pub deliveries: Vec<Delivery>,
    pub cost: f64,
}

/// Cumulative memory of the centralised scheme.
pub fn mgst_memory(k: usize, task: &DistributionTask, root: NodeId) -> u64 {
    let t = task.preprocessed();
    let n = t.graph_state.n_vertices() as u64;
    if k == 0 {
        return 0;
    }
    let at_root = t.graph_state.vertices().iter().filter(|&&v| t.alpha(v) == root).count() as u64;
    (k as u64 + 1) * n - at_root
}

fn root_fits(task: &DistributionTask, root: NodeId) -> bool {
    task.network.memory(root).admits(task.graph_state.n_vertices() as u64)
}

/// Smallest feasible k for `root`, searching only up to `cap`.
fn min_k(task: &DistributionTask, root: NodeId, cap: usize) -> Result<Option<(usize, Vec<Delivery>)>> {
    let Some(top) = try_k(task, root, cap)? else { return Ok(None) };
    let (mut lo, mut hi, mut best) = (1, cap, top);
    while lo < hi {
        let mid = (lo + hi) / 2;
        match try_k(task, root, mid)? {
            Some(d) => {
                hi = mid;
                best = d;
            }
            None => lo = mid + 1,
        }
    }
    Ok(Some((hi, best)))
}

pub fn mgst_plan(task: &DistributionTask) -> Result<MgstPlan> {
    mgst_plan_with_root(task, None)
}

/// Plan with an optional pinned root.
pub fn mgst_plan_with_root(task: &DistributionTask, pinned: Option<NodeId>) -> Result<MgstPlan> {
    task.check()?;
    mgst_plan_all(&task.preprocessed(), pinned)
}

/// Plan delivery of every vertex of the task, isolated ones included.
pub fn mgst_plan_all(task: &DistributionTask, pinned: Option<NodeId>) -> Result<MgstPlan> {
    task.check()?;
    let ns = task.graph_state.n_vertices();
    if ns == 0 {
        let root = pinned.unwrap_or(0);
        return Ok(MgstPlan { solution: Solution::empty(0), root, k: 0, deliveries: Vec::new(), cost: 0.0 });
    }
    let first = task.alpha(*task.graph_state.vertices().iter().next().unwrap());
    if task.graph_state.vertices().iter().all(|&v| task.alpha(v) == first) && pinned.is_none_or(|r| r == first) {
        return Ok(MgstPlan { solution: Solution::empty(0), root: first, k: 0, deliveries: Vec::new(), cost: 0.0 });
    }
    let roots: Vec<NodeId> = match pinned {
        Some(r) => vec![r],
        None => (0..task.network.n_nodes()).filter(|&r| root_fits(task, r)).collect(),
    };
    let found: Vec<(usize, f64, NodeId, Vec<Delivery>)> = roots
        .par_iter()
        .map(|&r| -> Result<Option<_>> {
            Ok(min_k(task, r, ns)?.map(|(k, d)| {
                let c = estimate_cost(task, &d);
                (k, c, r, d)
            }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let (k, cost, root, deliveries) = found
        .into_iter()
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)))
        .ok_or_else(|| Error::NoSolution("no root reaches every assigned node".into()))?;
    let solution = build_solution(task, root, k, &deliveries)?;
    Ok(MgstPlan { solution, root, k, deliveries, cost })
}

/// Bell paths plus the store-and-forward memory plan around the root.
pub fn build_solution(task: &DistributionTask, root: NodeId, k: usize, deliveries: &[Delivery]) -> Result<Solution> {
    let net = &task.network;
    let mut sol = Solution::empty(k);
    for d in deliveries {
        let v = d.vertex;
        let target = task.alpha(v);
        if target == root {
            for slot in 1..=k {
                sol.push_arc(net, Arc::Memory { node: root, slot, up: false }, v);
            }
            continue;
        }
        let s = d.shot;
        for slot in s..=k {
            sol.push_arc(net, Arc::Memory { node: target, slot, up: false }, v);
        }
        for slot in 1..s {
            sol.push_arc(net, Arc::Memory { node: root, slot, up: false }, v);
        }
        // Kept one extra slot until the delivery is confirmed.
        sol.push_arc(net, Arc::Memory { node: root, slot: s, up: true }, v);
        // Flow runs from the assigned node back to the root.
        let mut hops = Vec::with_capacity(d.channels.len());
        for i in (0..d.channels.len()).rev() {
            let (from, to) = (d.nodes[i + 1], d.nodes[i]);
            hops.push(Hop { arc: Arc::Bell { channel: d.channels[i], shot: s, from, to }, vertex: v });
        }
        let fusions = d.nodes[1..d.nodes.len() - 1].iter().map(|&n| (n, s)).collect();
        sol.push_path(net, PlannedPath { label: PathLabel::Deliver { vertex: v }, shot: s, hops, fusions });
    }
    sol.check(net)?;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_metrics, Assignment, Channel, GraphState, Network};
    use crate::validate::is_valid_solution;

    #[test]
    fn flow_graph_size() {
        let net = Network::simple(4, vec![Channel::new(0, 1, 1, 1.0), Channel::new(1, 2, 1, 1.0), Channel::new(2, 3, 1, 1.0)])
            .unwrap();
        let t = DistributionTask::new(net, GraphState::on(2, &[(0, 1)]).unwrap(), Assignment::from_slice(&[0, 3])).unwrap();
        let fg = build_flow_graph(&t, 1, 1);
        assert_eq!(fg.graph.n_nodes(), 8);
        let fg3 = build_flow_graph(&t, 1, 3);
        let from_root: Vec<_> = fg3.graph.arcs().iter().filter(|a| a.from == fg3.vroot()).collect();
        assert_eq!(from_root.len(), 3);
        assert!(from_root.iter().all(|a| a.cap == 2));
        for j in 0..2 {
            let into: Vec<_> = fg3.graph.arcs().iter().filter(|a| a.to == fg3.vend(j)).collect();
            assert_eq!(into.len(), 3);
            assert!(into.iter().all(|a| a.cap == 1));
        }
    }

    #[test]
    fn adjacent_pair() {
        let net = Network::simple(2, vec![Channel::new(0, 1, 1, 1.0)]).unwrap();
        let t = DistributionTask::new(net, GraphState::on(2, &[(0, 1)]).unwrap(), Assignment::from_slice(&[0, 1])).unwrap();
        let p = mgst_plan(&t).unwrap();
        assert_eq!(p.k, 1);
        assert_eq!(p.solution.paths.len(), 1);
        assert_eq!(p.solution.paths[0].hops.len(), 1);
        assert!(is_valid_solution(&p.solution, &t).unwrap().valid);
        let m = compute_metrics(&p.solution, &t.network).unwrap();
        assert_eq!(m.cum_memory, mgst_memory(1, &t, p.root));
    }

    #[test]
    fn star_around_root() {
        let net = Network::simple(5, (1..5).map(|i| Channel::new(0, i, 1, 1.0)).collect()).unwrap();
        let gs = GraphState::on(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let t = DistributionTask::new(net, gs, Assignment::from_slice(&[0, 1, 2, 3, 4])).unwrap();
        assert!(try_k(&t, 0, 1).unwrap().is_some());
        let p = mgst_plan(&t).unwrap();
        assert_eq!((p.k, p.root), (1, 0));
    }

    #[test]
    fn memory_formula_values() {
        let net = Network::simple(4, vec![Channel::new(0, 1, 1, 1.0), Channel::new(0, 2, 1, 1.0), Channel::new(0, 3, 1, 1.0)])
            .unwrap();
        let gs = GraphState::on(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let t = DistributionTask::new(net, gs, Assignment::from_slice(&[0, 1, 2, 3])).unwrap();
        assert_eq!(mgst_memory(3, &t, 0), 15);
        let pair = GraphState::on(2, &[(0, 1)]).unwrap();
        let t2 = DistributionTask::new(t.network.clone(), pair, Assignment::from_slice(&[1, 2])).unwrap();
        assert_eq!(mgst_memory(1, &t2, 0), 4);
    }
}
