//! Peer-to-peer planner: graph-state edges are routed greedily shot by shot
//! between the node sets currently holding each endpoint vertex.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flows::{modified_dijkstra_hops, ShortestPath};
use crate::model::{
    cost_eq, cost_lt, link_cost, Arc, DistributionTask, GraphState, Hop, NodeId, PathLabel, PlannedPath, Solution, VertexId,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MemoryStrategyKind {
    Minimum,
    #[default]
    Standard,
    Maximum,
}

impl MemoryStrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            MemoryStrategyKind::Minimum => "minimum",
            MemoryStrategyKind::Standard => "standard",
            MemoryStrategyKind::Maximum => "maximum",
        }
    }
}

impl std::str::FromStr for MemoryStrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minimum" | "min" => Ok(MemoryStrategyKind::Minimum),
            "standard" | "std" => Ok(MemoryStrategyKind::Standard),
            "maximum" | "max" => Ok(MemoryStrategyKind::Maximum),
            _ => invalid(format!("unknown memory strategy {s:?}")),
        }
    }
}

/// A graph the router can search: nodes, undirected links, occupancy costs.
pub trait RouteView {
    fn n_nodes(&self) -> usize;
    /// `(neighbour, link)` pairs in a fixed order.
    fn neighbors(&self, u: usize) -> &[(usize, usize)];
    fn n_links(&self) -> usize;
    /// Cost of one more use of `link` when `occ` uses are already booked.
    /// Infinite when the link is full.
    fn cost(&self, link: usize, occ: u32) -> f64;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub cost: f64,
    /// Links between this node and the holder the entry grew from.
    pub hops: usize,
    pub fixed: bool,
    /// Pending path this unfixed entry hangs on.
    pub backing: Option<usize>,
    /// Shot in which the vertex reached this node.
    pub created: usize,
    /// Node from the task's assignment set.
    pub assigned: bool,
}

/// A routed graph-state edge. `split` is the index of the node where the two
/// vertex sides meet, once decided.
#[derive(Clone, Debug, PartialEq)]
pub struct Routed {
    pub v1: VertexId,
    pub v2: VertexId,
    pub nodes: Vec<usize>,
    pub links: Vec<usize>,
    pub split: Option<usize>,
    pub shot: usize,
}

impl Routed {
    /// `(link, from, vertex)` per hop; each side runs away from its holder.
    pub fn hops(&self) -> Vec<(usize, usize, VertexId)> {
        let i = self.split.expect("path fixed before export");
        let mut out = Vec::with_capacity(self.links.len());
        for (j, &l) in self.links.iter().enumerate() {
            if j < i {
                out.push((l, self.nodes[j], self.v1));
            } else {
                out.push((l, self.nodes[j + 1], self.v2));
            }
        }
        out
    }

    pub fn fusion(&self) -> usize {
        self.nodes[self.split.expect("path fixed before export")]
    }
}

/// Vertex reaching map plus the paths routed so far.
#[derive(Clone, Debug, Default)]
pub struct Router {
    pub vrm: BTreeMap<VertexId, BTreeMap<usize, Entry>>,
    pub routed: Vec<Routed>,
    pub occ: Vec<u32>,
    /// Holder entries consumed as path endpoints: (vertex, node, shot).
    pub uses: Vec<(VertexId, usize, usize)>,
}

impl Router {
    pub fn new(n_links: usize) -> Self {
        Router { occ: vec![0; n_links], ..Default::default() }
    }

    pub fn seed(&mut self, v: VertexId, node: usize) {
        self.vrm.entry(v).or_default().insert(
            node,
            Entry { cost: 0.0, hops: 0, fixed: true, backing: None, created: 0, assigned: true },
        );
    }

    pub fn entries(&self, v: VertexId) -> impl Iterator<Item = (usize, &Entry)> {
        self.vrm.get(&v).into_iter().flat_map(|m| m.iter().map(|(&n, e)| (n, e)))
    }

    /// Decide where pending path `pid` splits: nodes up to `idx` belong to
    /// `v1`, the rest to `v2`, and both meet at `nodes[idx]`.
    pub fn fix_segment(&mut self, pid: usize, idx: usize) -> Result<()> {
        let p = self.routed.get(pid).ok_or_else(|| Error::InvalidArgument(format!("no path {pid}")))?;
        if p.split.is_some() {
            return invalid(format!("path {pid} is already fixed"));
        }
        if idx >= p.nodes.len() {
            return invalid(format!("split index {idx} outside path {pid}"));
        }
        let (v1, v2, nodes) = (p.v1, p.v2, p.nodes.clone());
        self.routed[pid].split = Some(idx);
        for (j, &n) in nodes.iter().enumerate() {
            for (v, keep) in [(v1, j <= idx), (v2, j >= idx)] {
                let Some(map) = self.vrm.get_mut(&v) else { continue };
                if map.get(&n).is_some_and(|e| e.backing == Some(pid)) {
                    if keep {
                        let e = map.get_mut(&n).unwrap();
                        e.fixed = true;
                        e.backing = None;
                    } else {
                        map.remove(&n);
                    }
                }
            }
        }
        Ok(())
    }

    /// Make the `v` entry at `node` fixed, resolving its pending path.
    fn commit(&mut self, v: VertexId, node: usize) -> Result<()> {
        let e = &self.vrm[&v][&node];
        if e.fixed {
            return Ok(());
        }
        let pid = e.backing.expect("unfixed entry has a backing path");
        let idx = self.routed[pid].nodes.iter().position(|&n| n == node).expect("entry lies on its path");
        self.fix_segment(pid, idx)
    }

    /// Route edge (a, b) in `shot`. `Ok(false)` when no residual path exists.
    pub fn route_edge<V: RouteView>(&mut self, view: &V, a: VertexId, b: VertexId, shot: usize) -> Result<bool> {
        let src: Vec<(usize, f64, usize)> = self.entries(a).map(|(n, e)| (n, e.cost, e.hops)).collect();
        let dst: Vec<(usize, f64, usize)> = self.entries(b).map(|(n, e)| (n, e.cost, e.hops)).collect();
        if src.is_empty() || dst.is_empty() {
            return invalid(format!("edge ({a},{b}) has an endpoint with no holder"));
        }
        let occ = &self.occ;
        let found = modified_dijkstra_hops(view.n_nodes(), &src, &dst, |u, out| {
            for &(v, l) in view.neighbors(u) {
                out.push((v, l, view.cost(l, occ[l])));
            }
        });
        let path = match found {
            Ok(p) => p,
            Err(Error::NoPath) => return Ok(false),
            Err(e) => return Err(e),
        };
        self.install(view, a, b, shot, path)?;
        Ok(true)
    }

    fn install<V: RouteView>(&mut self, view: &V, a: VertexId, b: VertexId, shot: usize, path: ShortestPath) -> Result<()> {
        let (n0, nh) = (path.source(), path.target());
        self.commit(a, n0)?;
        self.commit(b, nh)?;
        self.uses.push((a, n0, shot));
        self.uses.push((b, nh, shot));
        let mut prefix = vec![0.0];
        for &l in &path.arcs {
            let c = view.cost(l, self.occ[l]);
            prefix.push(prefix.last().unwrap() + c);
            self.occ[l] += 1;
        }
        let total = *prefix.last().unwrap();
        let holder = |v: VertexId, n: usize| {
            self.vrm.get(&v).and_then(|m| m.get(&n)).map(|e| (e.cost, e.hops)).ok_or_else(|| {
                Error::InvariantViolation(format!("vertex {v} lost its holder at node {n}"))
            })
        };
        let (ca, cb) = (holder(a, n0)?, holder(b, nh)?);
        let pid = self.routed.len();
        let h = path.arcs.len();
        self.routed.push(Routed {
            v1: a,
            v2: b,
            nodes: path.nodes.clone(),
            links: path.arcs.clone(),
            split: if h == 0 { Some(0) } else { None },
            shot,
        });
        if h == 0 {
            return Ok(());
        }
        for (i, &n) in path.nodes.iter().enumerate() {
            let sides = [(a, ca.0 + prefix[i], ca.1 + i), (b, cb.0 + total - prefix[i], cb.1 + h - i)];
            for (v, cost, hops) in sides {
                let map = self.vrm.entry(v).or_default();
                let fresh = Entry { cost, hops, fixed: false, backing: Some(pid), created: shot, assigned: false };
                match map.get(&n) {
                    None => {
                        map.insert(n, fresh);
                    }
                    Some(e) if !e.fixed && (cost_lt(cost, e.cost) || (cost_eq(cost, e.cost) && hops < e.hops)) => {
                        map.insert(n, fresh);
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Resolve every pending path by giving all of its links to `v1`.
    pub fn settle(&mut self) -> Result<()> {
        for pid in 0..self.routed.len() {
            if self.routed[pid].split.is_none() {
                let last = self.routed[pid].nodes.len() - 1;
                self.fix_segment(pid, last)?;
            }
        }
        Ok(())
    }
}

/// Degree order of the remaining graph: descending degree, then vertex id.
pub fn degree_order(gs: &GraphState) -> Vec<VertexId> {
    let mut vs: Vec<VertexId> = gs.vertices().iter().copied().filter(|&v| gs.degree(v) > 0).collect();
    vs.sort_by_key(|&v| (std::cmp::Reverse(gs.degree(v)), v));
    vs
}

/// One greedy pass over the remaining edges. Routed edges are removed from
/// `remaining`; returns how many were routed.
pub fn greedy_pass<V: RouteView>(router: &mut Router, view: &V, remaining: &mut GraphState, shot: usize) -> Result<usize> {
    let mut order = degree_order(remaining);
    let mut done = 0;
    while !order.is_empty() {
        let vc = order.remove(0);
        let mut nbrs = remaining.neighbors(vc);
        nbrs.sort_by_key(|&u| (std::cmp::Reverse(remaining.degree(u)), u));
        for u in nbrs {
            if router.route_edge(view, vc, u, shot)? {
                remaining.remove_edge(vc, u);
                done += 1;
                order.sort_by_key(|&v| (std::cmp::Reverse(remaining.degree(v)), v));
            }
        }
    }
    Ok(done)
}

/// Remove edges whose endpoints already share a holder node.
pub fn strip_local_edges(task: &DistributionTask) -> GraphState {
    let mut gs = task.graph_state.clone();
    for &(a, b) in task.graph_state.edges() {
        let na = task.assignment.nodes(a);
        if task.assignment.nodes(b).iter().any(|n| na.contains(n)) {
            gs.remove_edge(a, b);
        }
    }
    gs
}

/// The base network seen during one shot.
pub struct ShotView<'a> {
    pub task: &'a DistributionTask,
    pub shot: usize,
}

impl RouteView for ShotView<'_> {
    fn n_nodes(&self) -> usize {
        self.task.network.n_nodes()
    }
    fn neighbors(&self, u: usize) -> &[(usize, usize)] {
        self.task.network.neighbors(u)
    }
    fn n_links(&self) -> usize {
        self.task.network.channels().len()
    }
    fn cost(&self, link: usize, occ: u32) -> f64 {
        let c = self.task.network.channel(link);
        if c.one_shot && self.shot > 1 {
            return f64::INFINITY;
        }
        link_cost(c.prob, c.width, occ, self.task.network.cz_prob())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct P2pPlan {
    pub solution: Solution,
    pub n_shots: usize,
    pub routed: Vec<Routed>,
    /// Edges routed per shot, in routing order.
    pub edges_per_shot: Vec<Vec<(VertexId, VertexId)>>,
    /// Non-assigned holders stored across the boundary after shot k (index k−1).
    pub holds: Vec<BTreeSet<(VertexId, NodeId)>>,
    /// Holders dropped for lack of memory: (shot, vertex, node).
    pub dropped: Vec<(usize, VertexId, NodeId)>,
}

/// Safety stop for the shot loop.
pub const MAX_PLAN_SHOTS: usize = 10_000;

pub fn p2pgsd_plan(task: &DistributionTask, mem: MemoryStrategyKind) -> Result<P2pPlan> {
    task.check()?;
    let task = task.preprocessed();
    let mut remaining = strip_local_edges(&task);
    let mut router = Router::new(task.network.channels().len());
    for (v, ns) in task.assignment.iter() {
        for &n in ns {
            router.seed(v, n);
        }
    }
    let mut shot = 0;
    let mut edges_per_shot = Vec::new();
    let mut retained: Vec<BTreeSet<(VertexId, NodeId)>> = Vec::new();
    let mut dropped = Vec::new();
    let mut routed_all = Vec::new();
    while !remaining.edges().is_empty() {
        shot += 1;
        if shot > MAX_PLAN_SHOTS {
            return Err(Error::NoProgress(format!("{} edges left after {MAX_PLAN_SHOTS} shots", remaining.edges().len())));
        }
        router.occ.iter_mut().for_each(|o| *o = 0);
        let view = ShotView { task: &task, shot };
        let done = greedy_pass(&mut router, &view, &mut remaining, shot)?;
        if done == 0 {
            return Err(Error::NoProgress(format!("shot {shot} routed no edge")));
        }
        router.settle()?;
        let first_new = routed_all.len();
        routed_all.append(&mut router.routed);
        edges_per_shot.push(routed_all[first_new..].iter().map(|r| (r.v1, r.v2)).collect());
        // Carry holders into the next shot.
        let (keep, lost) = end_of_shot(&mut router, &task, mem, shot);
        dropped.extend(lost.into_iter().map(|(v, n)| (shot, v, n)));
        retained.push(keep);
    }
    let n_shots = shot;
    let holds = memory_holds(mem, &router.uses, &retained, n_shots);
    let mut solution = Solution::empty(n_shots);
    for r in &routed_all {
        let hops = r
            .hops()
            .into_iter()
            .map(|(l, from, v)| {
                let to = task.network.channel(l).other(from);
                Hop { arc: Arc::Bell { channel: l, shot: r.shot, from, to }, vertex: v }
            })
            .collect();
        let path = PlannedPath {
            label: PathLabel::Edge { v1: r.v1, v2: r.v2 },
            shot: r.shot,
            hops,
            fusions: vec![(r.fusion(), r.shot)],
        };
        solution.push_path(&task.network, path);
    }
    add_memory(&mut solution, &task, &holds);
    solution.check(&task.network)?;
    Ok(P2pPlan { solution, n_shots, routed: routed_all, edges_per_shot, holds, dropped })
}

/// Apply the memory strategy at a shot boundary: returns the kept
/// non-assigned holders and the ones dropped for lack of memory.
fn end_of_shot(
    router: &mut Router,
    task: &DistributionTask,
    mem: MemoryStrategyKind,
    _shot: usize,
) -> (BTreeSet<(VertexId, NodeId)>, Vec<(VertexId, NodeId)>) {
    let mut keep = BTreeSet::new();
    let mut lost = Vec::new();
    if mem == MemoryStrategyKind::Minimum {
        for map in router.vrm.values_mut() {
            map.retain(|_, e| e.assigned);
        }
        return (keep, lost);
    }
    // Candidates per node, cheapest first.
    let mut by_node: BTreeMap<NodeId, Vec<(f64, VertexId)>> = BTreeMap::new();
    for (&v, map) in &router.vrm {
        for (&n, e) in map {
            if e.fixed && !e.assigned {
                by_node.entry(n).or_default().push((e.cost, v));
            }
        }
    }
    for (n, mut cands) in by_node {
        cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let room = match task.network.memory(n).capacity() {
            None => usize::MAX,
            Some(m) => (m as usize).saturating_sub(task.assignment.load(n)),
        };
        for (i, (_, v)) in cands.into_iter().enumerate() {
            if i < room {
                keep.insert((v, n));
            } else {
                lost.push((v, n));
            }
        }
    }
    for (&v, map) in router.vrm.iter_mut() {
        map.retain(|&n, e| e.assigned || keep.contains(&(v, n)));
        for e in map.values_mut() {
            e.cost = 0.0;
            e.hops = 0;
        }
    }
    (keep, lost)
}

/// Memory links carrying non-assigned holders, per boundary slot.
fn memory_holds(
    mem: MemoryStrategyKind,
    uses: &[(VertexId, NodeId, usize)],
    retained: &[BTreeSet<(VertexId, NodeId)>],
    n_shots: usize,
) -> Vec<BTreeSet<(VertexId, NodeId)>> {
    let mut holds = vec![BTreeSet::new(); n_shots.saturating_sub(1)];
    match mem {
        MemoryStrategyKind::Minimum => {}
        MemoryStrategyKind::Maximum => {
            for k in 1..n_shots {
                holds[k - 1] = retained[k - 1].clone();
            }
        }
        MemoryStrategyKind::Standard => {
            // A holder used in shot u is stored over every boundary since
            // the last shot in which it was (re)created.
            for &(v, n, u) in uses {
                let mut k = u;
                while k >= 2 && retained[k - 2].contains(&(v, n)) {
                    holds[k - 2].insert((v, n));
                    k -= 1;
                }
            }
        }
    }
    holds
}

fn add_memory(sol: &mut Solution, task: &DistributionTask, holds: &[BTreeSet<(VertexId, NodeId)>]) {
    let n = sol.n_shots();
    for (v, ns) in task.assignment.iter() {
        for &node in ns {
            for slot in 1..=n {
                sol.push_arc(&task.network, Arc::Memory { node, slot, up: false }, v);
            }
        }
    }
    for (k, set) in holds.iter().enumerate() {
        for &(v, node) in set {
            sol.push_arc(&task.network, Arc::Memory { node, slot: k + 1, up: true }, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_metrics, Assignment, Channel, Network};
    use crate::validate::is_valid_solution;

    fn line(n: usize) -> Network {
        Network::simple(n, (0..n - 1).map(|i| Channel::new(i, i + 1, 1, 1.0)).collect()).unwrap()
    }

    #[test]
    fn bell_pair_adjacent() {
        let t = DistributionTask::new(line(2), GraphState::on(2, &[(0, 1)]).unwrap(), Assignment::from_slice(&[0, 1]))
            .unwrap();
        let p = p2pgsd_plan(&t, MemoryStrategyKind::Standard).unwrap();
        assert_eq!(p.n_shots, 1);
        assert_eq!(p.solution.paths.len(), 1);
        assert_eq!(p.solution.paths[0].hops.len(), 1);
        assert!(is_valid_solution(&p.solution, &t).unwrap().valid);
    }

    #[test]
    fn fix_segment_partitions() {
        let mut r = Router::new(3);
        r.seed(0, 0);
        r.seed(1, 3);
        r.routed.push(Routed { v1: 0, v2: 1, nodes: vec![0, 1, 2, 3], links: vec![0, 1, 2], split: None, shot: 1 });
        for (i, &n) in [0usize, 1, 2, 3].iter().enumerate() {
            for v in [0, 1] {
                r.vrm.get_mut(&v).unwrap().entry(n).or_insert(Entry {
                    cost: i as f64,
                    hops: i,
                    fixed: false,
                    backing: Some(0),
                    created: 1,
                    assigned: false,
                });
            }
        }
        r.fix_segment(0, 1).unwrap();
        let hops = r.routed[0].hops();
        assert_eq!(hops, vec![(0, 0, 0), (1, 2, 1), (2, 3, 1)]);
        assert_eq!(r.vrm[&0].keys().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(r.vrm[&1].keys().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(r.fix_segment(0, 2).is_err());
    }

    #[test]
    fn fix_at_endpoint_gives_all_to_other_side() {
        let mut r = Router::new(2);
        r.routed.push(Routed { v1: 4, v2: 5, nodes: vec![0, 1, 2], links: vec![0, 1], split: None, shot: 1 });
        r.fix_segment(0, 0).unwrap();
        assert!(r.routed[0].hops().iter().all(|&(_, _, v)| v == 5));
    }

    #[test]
    fn minimum_memory_is_n_times_vertices() {
        // Three pairs through one width-1 channel need three shots.
        let mut chans = vec![Channel::new(0, 1, 1, 1.0)];
        for i in 0..3 {
            chans.push(Channel::new(0, 2 + i, 1, 1.0));
            chans.push(Channel::new(1, 5 + i, 1, 1.0));
        }
        let net = Network::simple(8, chans).unwrap();
        let gs = GraphState::on(6, &[(0, 1), (2, 3), (4, 5)]).unwrap();
        let t = DistributionTask::new(net, gs, Assignment::from_slice(&[2, 5, 3, 6, 4, 7])).unwrap();
        let p = p2pgsd_plan(&t, MemoryStrategyKind::Minimum).unwrap();
        assert_eq!(p.n_shots, 3);
        let m = compute_metrics(&p.solution, &t.network).unwrap();
        assert_eq!(m.cum_memory, 18);
        assert!(is_valid_solution(&p.solution, &t).unwrap().valid);
    }
}
