//! Solution checking and tiny-instance oracles.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use crate::error::{invalid, Result};
use crate::model::{DistributionTask, NodeId, Solution, VertexId};
use crate::p2pgsd::strip_local_edges;

/// Space-time points `(node, slot)` holding part of `v`'s connection.
///
/// Starts from every node assigned to `v` at slot N+1 and follows arcs that
/// carry positive flow for `v` in the direction of travel.
pub fn reachable_nodes(sol: &Solution, task: &DistributionTask, v: VertexId) -> Result<BTreeSet<(NodeId, usize)>> {
    let starts = task.assignment.nodes(v);
    if starts.is_empty() {
        return invalid(format!("vertex {v} is not assigned"));
    }
    let net = &task.network;
    let n_shots = sol.n_shots();
    let mut seen: BTreeSet<(NodeId, usize)> = starts.iter().map(|&n| (n, n_shots + 1)).collect();
    let mut queue: VecDeque<_> = seen.iter().copied().collect();
    while let Some((n, k)) = queue.pop_front() {
        let mut push = |p: (NodeId, usize)| {
            if seen.insert(p) {
                queue.push_back(p);
            }
        };
        if k <= n_shots {
            for &(m, c) in net.neighbors(n) {
                let forward = net.channel(c).endpoints[0] == n;
                if sol.bell[k - 1].oriented(c, v, forward) > 0 {
                    push((m, k));
                }
            }
            if sol.memory[k - 1].get(n, v) > 0 {
                push((n, k + 1));
            }
        }
        if k >= 2 && sol.memory[k - 2].get(n, v) < 0 {
            push((n, k - 1));
        }
    }
    Ok(seen)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub valid: bool,
    /// A shared space-time point per satisfied edge.
    pub meetings: BTreeMap<(VertexId, VertexId), (NodeId, usize)>,
    /// The first edge without a shared point.
    pub failing: Option<(VertexId, VertexId)>,
}

pub fn is_valid_solution(sol: &Solution, task: &DistributionTask) -> Result<Verdict> {
    sol.check(&task.network)?;
    let mut reach = BTreeMap::new();
    for &v in task.graph_state.vertices() {
        reach.insert(v, reachable_nodes(sol, task, v)?);
    }
    let mut meetings = BTreeMap::new();
    for &(a, b) in task.graph_state.edges() {
        match reach[&a].intersection(&reach[&b]).next() {
            Some(&p) => {
                meetings.insert((a, b), p);
            }
            None => return Ok(Verdict { valid: false, meetings, failing: Some((a, b)) }),
        }
    }
    Ok(Verdict { valid: true, meetings, failing: None })
}

/// Size limits of the exhaustive oracle.
pub const ORACLE_MAX_NODES: usize = 8;
pub const ORACLE_MAX_CHANNELS: usize = 16;
pub const ORACLE_MAX_EDGES: usize = 8;
pub const ORACLE_MAX_SHOTS: usize = 3;

/// Least number of shots admitting a valid solution, if at most `max_n`.
///
/// Requires unlimited memory everywhere. In that regime memory never binds,
/// so a solution exists in N shots exactly when every vertex can be given a
/// tree of channels containing its assigned node such that the trees of the
/// two ends of every edge share a node, and no channel is used by more than
/// N·width trees. The search assigns a meeting node to every edge and then
/// tries Steiner trees per vertex.
pub fn brute_force_min_shots(task: &DistributionTask, max_n: usize) -> Result<Option<usize>> {
    let task = task.preprocessed();
    let net = &task.network;
    if net.memories().iter().any(|m| m.capacity().is_some()) {
        return invalid("the oracle is exact only with unlimited memory");
    }
    if net.n_nodes() > ORACLE_MAX_NODES
        || net.channels().len() > ORACLE_MAX_CHANNELS
        || task.graph_state.edges().len() > ORACLE_MAX_EDGES
        || max_n > ORACLE_MAX_SHOTS
    {
        return invalid("instance exceeds the oracle size bounds");
    }
    // Edges between vertices sharing a node need no shot.
    if strip_local_edges(&task).edges().is_empty() {
        return Ok(Some(0));
    }
    let mut oracle = Oracle::new(&task);
    for n in 1..=max_n {
        if oracle.feasible(n) {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

struct Oracle<'a> {
    task: &'a DistributionTask,
    edges: Vec<(VertexId, VertexId)>,
    verts: Vec<VertexId>,
    /// Trees per (root, terminal mask) as channel lists.
    trees: HashMap<(NodeId, u32), Vec<Vec<usize>>>,
}

impl<'a> Oracle<'a> {
    fn new(task: &'a DistributionTask) -> Self {
        Oracle {
            task,
            edges: task.graph_state.edges().iter().copied().collect(),
            verts: task.graph_state.vertices().iter().copied().collect(),
            trees: HashMap::new(),
        }
    }

    fn feasible(&mut self, n_shots: usize) -> bool {
        let cap: Vec<usize> = self.task.network.channels().iter().map(|c| c.width as usize * n_shots).collect();
        let mut meet = vec![0usize; self.edges.len()];
        self.assign_meetings(0, &mut meet, &cap)
    }

    fn assign_meetings(&mut self, i: usize, meet: &mut Vec<usize>, cap: &[usize]) -> bool {
        if i == self.edges.len() {
            return self.route(meet, cap);
        }
        for m in 0..self.task.network.n_nodes() {
            meet[i] = m;
            if self.assign_meetings(i + 1, meet, cap) {
                return true;
            }
        }
        false
    }

    fn route(&mut self, meet: &[usize], cap: &[usize]) -> bool {
        let mut options = Vec::with_capacity(self.verts.len());
        for &v in &self.verts {
            let root = self.task.alpha(v);
            let mut mask = 1u32 << root;
            for (e, &(a, b)) in self.edges.iter().enumerate() {
                if a == v || b == v {
                    mask |= 1 << meet[e];
                }
            }
            let key = (root, mask);
            if !self.trees.contains_key(&key) {
                let t = steiner_trees(self.task, root, mask);
                self.trees.insert(key, t);
            }
            if self.trees[&key].is_empty() {
                return false;
            }
            options.push(key);
        }
        // Most constrained vertices first.
        let mut order: Vec<usize> = (0..options.len()).collect();
        order.sort_by_key(|&i| self.trees[&options[i]].len());
        let mut load = vec![0usize; cap.len()];
        self.pick(&order, 0, &options, &mut load, cap)
    }

    fn pick(&self, order: &[usize], i: usize, options: &[(NodeId, u32)], load: &mut [usize], cap: &[usize]) -> bool {
        if i == order.len() {
            return true;
        }
        for tree in &self.trees[&options[order[i]]] {
            if tree.iter().any(|&c| load[c] + 1 > cap[c]) {
                continue;
            }
            for &c in tree {
                load[c] += 1;
            }
            let ok = self.pick(order, i + 1, options, load, cap);
            for &c in tree {
                load[c] -= 1;
            }
            if ok {
                return true;
            }
        }
        false
    }
}

/// Trees containing `root` that span every node in `mask` and whose leaves
/// all lie in `mask`.
fn steiner_trees(task: &DistributionTask, root: NodeId, mask: u32) -> Vec<Vec<usize>> {
    let net = &task.network;
    let m = net.channels().len();
    let need = mask.count_ones() as usize;
    let mut out = Vec::new();
    if need == 1 {
        out.push(Vec::new());
        return out;
    }
    for bits in 1u32..(1 << m) {
        let k = bits.count_ones() as usize;
        if k + 1 < need || k >= net.n_nodes() {
            continue;
        }
        let chans: Vec<usize> = (0..m).filter(|&c| bits >> c & 1 == 1).collect();
        let mut deg = vec![0u32; net.n_nodes()];
        let mut nodes = 0u32;
        for &c in &chans {
            for e in net.channel(c).endpoints {
                deg[e] += 1;
                nodes |= 1 << e;
            }
        }
        if nodes & mask != mask || nodes.count_ones() as usize != k + 1 {
            continue;
        }
        if (0..net.n_nodes()).any(|n| deg[n] == 1 && mask >> n & 1 == 0) {
            continue;
        }
        // k edges on k+1 nodes: a tree iff connected.
        let mut comp = 1u32 << root;
        loop {
            let mut grown = comp;
            for &c in &chans {
                let [a, b] = net.channel(c).endpoints;
                if comp >> a & 1 == 1 || comp >> b & 1 == 1 {
                    grown |= (1 << a) | (1 << b);
                }
            }
            if grown == comp {
                break;
            }
            comp = grown;
        }
        if comp == nodes {
            out.push(chans);
        }
    }
    out.sort_by_key(|t| t.len());
    out
}

/// Checks that the exact minimum shot count is at most ⌊|V_S|/2⌋.
pub fn check_upper_bound(task: &DistributionTask) -> Result<bool> {
    let n = task.preprocessed().graph_state.n_vertices();
    let bound = n / 2;
    let probe = bound.clamp(1, ORACLE_MAX_SHOTS);
    match brute_force_min_shots(task, probe)? {
        Some(k) => Ok(k <= bound),
        None => Ok(false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Arc, Assignment, Channel, GraphState, Network};

    fn line3() -> DistributionTask {
        let net = Network::simple(3, vec![Channel::new(0, 1, 1, 1.0), Channel::new(1, 2, 1, 1.0)]).unwrap();
        DistributionTask::new(net, GraphState::on(2, &[(0, 1)]).unwrap(), Assignment::from_slice(&[0, 2])).unwrap()
    }

    #[test]
    fn empty_solution_base_case() {
        let t = line3();
        let sol = Solution::empty(2);
        assert_eq!(reachable_nodes(&sol, &t, 0).unwrap(), BTreeSet::from([(0, 3)]));
        assert!(!is_valid_solution(&sol, &t).unwrap().valid);
        assert_eq!(is_valid_solution(&sol, &t).unwrap().failing, Some((0, 1)));
    }

    #[test]
    fn memory_chain_downward() {
        let t = line3();
        let mut sol = Solution::empty(3);
        for slot in 1..=3 {
            sol.push_arc(&t.network, Arc::Memory { node: 0, slot, up: false }, 0);
        }
        let r = reachable_nodes(&sol, &t, 0).unwrap();
        assert_eq!(r, (1..=4).map(|k| (0, k)).collect());
    }

    #[test]
    fn line_solution_valid() {
        let t = line3();
        let mut sol = Solution::empty(1);
        sol.push_arc(&t.network, Arc::Memory { node: 0, slot: 1, up: false }, 0);
        sol.push_arc(&t.network, Arc::Bell { channel: 0, shot: 1, from: 0, to: 1 }, 0);
        sol.push_arc(&t.network, Arc::Memory { node: 2, slot: 1, up: false }, 1);
        sol.push_arc(&t.network, Arc::Bell { channel: 1, shot: 1, from: 2, to: 1 }, 1);
        let v = is_valid_solution(&sol, &t).unwrap();
        assert!(v.valid);
        assert_eq!(v.meetings[&(0, 1)], (1, 1));
    }

    #[test]
    fn oracle_small_cases() {
        assert_eq!(brute_force_min_shots(&line3(), 3).unwrap(), Some(1));
        // Two pairs forced through one width-1 channel.
        let net = Network::simple(
            6,
            vec![
                Channel::new(0, 2, 1, 1.0),
                Channel::new(1, 2, 1, 1.0),
                Channel::new(2, 3, 1, 1.0),
                Channel::new(3, 4, 1, 1.0),
                Channel::new(3, 5, 1, 1.0),
            ],
        )
        .unwrap();
        let gs = GraphState::on(4, &[(0, 1), (2, 3)]).unwrap();
        let t = DistributionTask::new(net, gs, Assignment::from_slice(&[0, 4, 1, 5])).unwrap();
        assert_eq!(brute_force_min_shots(&t, 3).unwrap(), Some(2));
        assert!(check_upper_bound(&t).unwrap());
    }
}
