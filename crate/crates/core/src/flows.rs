//! Flow and shortest-path kernels.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{invalid, violated, Error, Result};
use crate::model::{cost_eq, cost_lt, COST_EPS};

#[derive(Clone, Debug, PartialEq)]
pub struct FlowArc {
    pub from: usize,
    pub to: usize,
    pub cap: i64,
    pub cost: f64,
    /// Usable in both directions with one shared capacity.
    pub undirected: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowGraph {
    n: usize,
    arcs: Vec<FlowArc>,
}

impl FlowGraph {
    pub fn new(n: usize) -> Self {
        FlowGraph { n, arcs: Vec::new() }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn arcs(&self) -> &[FlowArc] {
        &self.arcs
    }

    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        self.push(FlowArc { from, to, cap, cost, undirected: false })
    }

    /// An edge whose net flow in either direction is bounded by `cap`.
    pub fn add_edge(&mut self, a: usize, b: usize, cap: i64, cost: f64) -> usize {
        self.push(FlowArc { from: a, to: b, cap, cost, undirected: true })
    }

    fn push(&mut self, arc: FlowArc) -> usize {
        assert!(arc.from < self.n && arc.to < self.n, "arc endpoint out of range");
        assert!(arc.cap >= 0, "negative capacity");
        assert!(arc.cost.is_finite(), "non-finite arc cost");
        self.arcs.push(arc);
        self.arcs.len() - 1
    }
}

/// Residual edge store used by both flow solvers.
struct Residual {
    head: Vec<usize>,
    cap: Vec<i64>,
    cost: Vec<f64>,
    adj: Vec<Vec<usize>>,
}

impl Residual {
    fn new(n: usize) -> Self {
        Residual { head: Vec::new(), cap: Vec::new(), cost: Vec::new(), adj: vec![Vec::new(); n] }
    }

    /// Adds `e` and its partner `e ^ 1`.
    fn pair(&mut self, u: usize, v: usize, cap_uv: i64, cap_vu: i64, cost: f64) -> usize {
        let e = self.head.len();
        self.head.extend([v, u]);
        self.cap.extend([cap_uv, cap_vu]);
        self.cost.extend([cost, -cost]);
        self.adj[u].push(e);
        self.adj[v].push(e + 1);
        e
    }
}

/// Maximum s-t flow (Dinic). Returns the value and the flow on every arc;
/// undirected arcs report signed flow, positive along `from → to`.
pub fn max_flow(g: &FlowGraph, s: usize, t: usize) -> (i64, Vec<i64>) {
    let mut r = Residual::new(g.n);
    let ids: Vec<usize> = g
        .arcs
        .iter()
        .map(|a| r.pair(a.from, a.to, a.cap, if a.undirected { a.cap } else { 0 }, 0.0))
        .collect();
    let mut value = 0;
    if s != t {
        let mut level = vec![usize::MAX; g.n];
        let mut it = vec![0usize; g.n];
        loop {
            level.fill(usize::MAX);
            level[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &e in &r.adj[u] {
                    let v = r.head[e];
                    if r.cap[e] > 0 && level[v] == usize::MAX {
                        level[v] = level[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            if level[t] == usize::MAX {
                break;
            }
            it.fill(0);
            loop {
                let f = augment(&mut r, &level, &mut it, s, t, i64::MAX);
                if f == 0 {
                    break;
                }
                value += f;
            }
        }
    }
    let flow = g
        .arcs
        .iter()
        .zip(&ids)
        .map(|(a, &e)| a.cap - r.cap[e])
        .collect();
    (value, flow)
}

fn augment(r: &mut Residual, level: &[usize], it: &mut [usize], u: usize, t: usize, limit: i64) -> i64 {
    if u == t {
        return limit;
    }
    while it[u] < r.adj[u].len() {
        let e = r.adj[u][it[u]];
        let v = r.head[e];
        if r.cap[e] > 0 && level[v] == level[u] + 1 {
            let f = augment(r, level, it, v, t, limit.min(r.cap[e]));
            if f > 0 {
                r.cap[e] -= f;
                r.cap[e ^ 1] += f;
                return f;
            }
        }
        it[u] += 1;
    }
    0
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostFlow {
    pub value: i64,
    pub cost: f64,
    /// Per input arc; signed for undirected arcs.
    pub flow: Vec<i64>,
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64, usize);

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Minimum-cost flow of value `min(limit, max flow)` from `s` to `t`
/// by successive shortest paths with potentials.
pub fn min_cost_flow(g: &FlowGraph, s: usize, t: usize, limit: Option<i64>) -> Result<CostFlow> {
    let n = g.n;
    let mut r = Residual::new(n);
    // Undirected arcs become two directed arcs; net flow is taken afterwards.
    let mut ids = Vec::with_capacity(g.arcs.len());
    for a in &g.arcs {
        let fwd = r.pair(a.from, a.to, a.cap, 0, a.cost);
        let back = if a.undirected { Some(r.pair(a.to, a.from, a.cap, 0, a.cost)) } else { None };
        ids.push((fwd, back));
    }
    if has_negative_cycle(g) {
        return invalid("flow graph contains a negative-cost cycle");
    }
    let mut pot = bellman_ford(&r, s, n);
    for p in pot.iter_mut() {
        if !p.is_finite() {
            *p = 0.0;
        }
    }
    let want = limit.unwrap_or(i64::MAX);
    let mut value = 0i64;
    let mut cost = 0.0;
    while value < want && s != t {
        let mut dist = vec![f64::INFINITY; n];
        let mut prev = vec![usize::MAX; n];
        dist[s] = 0.0;
        let mut heap = BinaryHeap::from([Key(0.0, s)]);
        while let Some(Key(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &r.adj[u] {
                if r.cap[e] <= 0 {
                    continue;
                }
                let v = r.head[e];
                let nd = d + r.cost[e] + pot[u] - pot[v];
                let nd = if nd < dist[u] { dist[u] } else { nd };
                if nd < dist[v] - COST_EPS * 1e-3 {
                    dist[v] = nd;
                    prev[v] = e;
                    heap.push(Key(nd, v));
                }
            }
        }
        if !dist[t].is_finite() {
            break;
        }
        for v in 0..n {
            if dist[v].is_finite() {
                pot[v] += dist[v];
            }
        }
        let mut push = want - value;
        let mut v = t;
        while v != s {
            let e = prev[v];
            push = push.min(r.cap[e]);
            v = r.head[e ^ 1];
        }
        let mut v = t;
        while v != s {
            let e = prev[v];
            r.cap[e] -= push;
            r.cap[e ^ 1] += push;
            cost += push as f64 * r.cost[e];
            v = r.head[e ^ 1];
        }
        value += push;
    }
    let flow = g
        .arcs
        .iter()
        .zip(&ids)
        .map(|(a, &(f, b))| {
            let fwd = a.cap - r.cap[f];
            let back = b.map(|b| a.cap - r.cap[b]).unwrap_or(0);
            fwd - back
        })
        .collect::<Vec<_>>();
    // Cancelled opposite flows on undirected arcs only happen at zero cost,
    // so recomputing from the net flow gives the same total.
    let cost_net = g.arcs.iter().zip(&flow).map(|(a, f)| f.abs() as f64 * a.cost).sum::<f64>();
    debug_assert!(cost_net <= cost + 1e-6);
    Ok(CostFlow { value, cost: cost_net, flow })
}

/// Maximum flow of minimum cost.
pub fn min_cost_max_flow(g: &FlowGraph, s: usize, t: usize) -> Result<CostFlow> {
    min_cost_flow(g, s, t, None)
}

fn bellman_ford(r: &Residual, s: usize, n: usize) -> Vec<f64> {
    let mut d = vec![f64::INFINITY; n];
    d[s] = 0.0;
    for _ in 0..n {
        let mut changed = false;
        for u in 0..n {
            if !d[u].is_finite() {
                continue;
            }
            for &e in &r.adj[u] {
                if r.cap[e] > 0 && d[u] + r.cost[e] < d[r.head[e]] - 1e-12 {
                    d[r.head[e]] = d[u] + r.cost[e];
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    d
}

fn has_negative_cycle(g: &FlowGraph) -> bool {
    let mut d = vec![0.0f64; g.n];
    let mut arcs: Vec<(usize, usize, f64)> = Vec::new();
    for a in &g.arcs {
        if a.cap == 0 {
            continue;
        }
        arcs.push((a.from, a.to, a.cost));
        if a.undirected {
            arcs.push((a.to, a.from, a.cost));
        }
    }
    for round in 0..=g.n {
        let mut changed = false;
        for &(u, v, c) in &arcs {
            if d[u] + c < d[v] - 1e-12 {
                d[v] = d[u] + c;
                changed = true;
            }
        }
        if !changed {
            return false;
        }
        if round == g.n {
            return true;
        }
    }
    false
}

/// One unit s-t path: arcs with the direction they are used in.
pub type UnitPath = Vec<(usize, bool)>;

/// Split an integral s-t flow into unit paths. Circulations are dropped.
pub fn flow_decomposition(g: &FlowGraph, flow: &[i64], s: usize, t: usize) -> Result<Vec<UnitPath>> {
    if flow.len() != g.arcs.len() {
        return invalid("flow vector length differs from arc count");
    }
    let mut rem = flow.to_vec();
    let mut net = vec![0i64; g.n];
    for (a, &f) in g.arcs.iter().zip(flow) {
        if f < 0 && !a.undirected {
            return violated("negative flow on a directed arc");
        }
        if f.abs() > a.cap {
            return violated(format!("flow {f} exceeds capacity {} on {}→{}", a.cap, a.from, a.to));
        }
        net[a.from] += f;
        net[a.to] -= f;
    }
    for (v, &x) in net.iter().enumerate() {
        if v != s && v != t && x != 0 {
            return violated(format!("flow not conserved at node {v} (excess {x})"));
        }
    }
    // Outgoing arc candidates per node, by arc id.
    let mut out: Vec<Vec<(usize, bool)>> = vec![Vec::new(); g.n];
    for (i, a) in g.arcs.iter().enumerate() {
        out[a.from].push((i, true));
        if a.undirected {
            out[a.to].push((i, false));
        }
    }
    for o in &mut out {
        o.sort_unstable();
    }
    let next = |rem: &[i64], u: usize| -> Option<(usize, bool)> {
        out[u].iter().copied().find(|&(i, fwd)| if fwd { rem[i] > 0 } else { rem[i] < 0 })
    };
    let take = |rem: &mut [i64], (i, fwd): (usize, bool)| {
        rem[i] += if fwd { -1 } else { 1 };
    };
    let head = |(i, fwd): (usize, bool)| if fwd { g.arcs[i].to } else { g.arcs[i].from };
    let mut paths = Vec::new();
    let value = net[s].max(0);
    for _ in 0..value {
        let mut path: Vec<(usize, bool)> = Vec::new();
        let mut nodes = vec![s];
        let mut u = s;
        while u != t {
            let Some(step) = next(&rem, u) else {
                return violated("decomposition stalled before reaching the sink");
            };
            take(&mut rem, step);
            let v = head(step);
            if let Some(pos) = nodes.iter().position(|&x| x == v) {
                // Closed a cycle: its flow is already removed, forget it.
                path.truncate(pos);
                nodes.truncate(pos + 1);
            } else {
                path.push(step);
                nodes.push(v);
            }
            u = v;
        }
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShortestPath {
    pub nodes: Vec<usize>,
    /// Arc ids as supplied by the edge callback.
    pub arcs: Vec<usize>,
    pub cost: f64,
}

impl ShortestPath {
    pub fn source(&self) -> usize {
        self.nodes[0]
    }
    pub fn target(&self) -> usize {
        *self.nodes.last().unwrap()
    }
}

/// Multi-source multi-target Dijkstra.
///
/// Minimises `entry(s) + path + exit(t)`. `edges(u, out)` pushes
/// `(v, arc id, cost)` for the arcs leaving `u`; costs must be non-negative
/// and infinite costs are skipped. Ties go to fewer hops, then smaller node
/// ids, then smaller arc ids.
pub fn modified_dijkstra<F>(
    n: usize,
    sources: &[(usize, f64)],
    targets: &[(usize, f64)],
    edges: F,
) -> Result<ShortestPath>
where
    F: FnMut(usize, &mut Vec<(usize, usize, f64)>),
{
    let s: Vec<_> = sources.iter().map(|&(u, c)| (u, c, 0)).collect();
    let t: Vec<_> = targets.iter().map(|&(u, c)| (u, c, 0)).collect();
    modified_dijkstra_hops(n, &s, &t, edges)
}

/// [`modified_dijkstra`] with hop counts on the entry and exit costs, so the
/// hop tie-break sees whole paths.
pub fn modified_dijkstra_hops<F>(
    n: usize,
    sources: &[(usize, f64, usize)],
    targets: &[(usize, f64, usize)],
    mut edges: F,
) -> Result<ShortestPath>
where
    F: FnMut(usize, &mut Vec<(usize, usize, f64)>),
{
    #[derive(Clone, Copy)]
    struct Label {
        cost: f64,
        hops: usize,
        prev: usize,
        arc: usize,
    }
    fn better(a: &Label, b: &Label) -> bool {
        if cost_lt(a.cost, b.cost) {
            return true;
        }
        if !cost_eq(a.cost, b.cost) {
            return false;
        }
        (a.hops, a.prev, a.arc) < (b.hops, b.prev, b.arc)
    }

    let none = Label { cost: f64::INFINITY, hops: usize::MAX, prev: usize::MAX, arc: usize::MAX };
    let mut label = vec![none; n];
    let mut exit = vec![(f64::INFINITY, usize::MAX); n];
    for &(t, c, h) in targets {
        if c < 0.0 {
            return invalid("negative exit cost");
        }
        let e = &mut exit[t];
        if cost_lt(c, e.0) || (cost_eq(c, e.0) && h < e.1) {
            *e = (c, h);
        }
    }
    let mut heap = BinaryHeap::new();
    for &(s, c, h) in sources {
        if c < 0.0 {
            return invalid("negative entry cost");
        }
        let l = Label { cost: c, hops: h, prev: usize::MAX, arc: usize::MAX };
        if better(&l, &label[s]) {
            label[s] = l;
        }
    }
    for (u, l) in label.iter().enumerate() {
        if l.cost.is_finite() {
            heap.push(HeapItem(l.cost, l.hops, u));
        }
    }
    let mut done = vec![false; n];
    let mut best: Option<(f64, usize, usize)> = None;
    let mut buf = Vec::new();
    while let Some(HeapItem(d, h, u)) = heap.pop() {
        if done[u] || d != label[u].cost || h != label[u].hops {
            continue;
        }
        if let Some((bc, _, _)) = best {
            if cost_lt(bc, d) {
                break;
            }
        }
        done[u] = true;
        if exit[u].0.is_finite() {
            let total = d + exit[u].0;
            let cand = (total, label[u].hops + exit[u].1, u);
            let take = match best {
                None => true,
                Some((bc, bh, bu)) => {
                    cost_lt(total, bc) || (cost_eq(total, bc) && (cand.1, cand.2) < (bh, bu))
                }
            };
            if take {
                best = Some(cand);
            }
        }
        buf.clear();
        edges(u, &mut buf);
        for &(v, arc, c) in &buf {
            if !c.is_finite() || done[v] {
                continue;
            }
            debug_assert!(c >= 0.0, "negative arc cost");
            let l = Label { cost: d + c, hops: label[u].hops + 1, prev: u, arc };
            if better(&l, &label[v]) {
                label[v] = l;
                heap.push(HeapItem(l.cost, l.hops, v));
            }
        }
    }
    let (cost, _, t) = best.ok_or(Error::NoPath)?;
    let mut nodes = vec![t];
    let mut arcs = Vec::new();
    let mut u = t;
    while label[u].prev != usize::MAX {
        arcs.push(label[u].arc);
        u = label[u].prev;
        nodes.push(u);
    }
    nodes.reverse();
    arcs.reverse();
    Ok(ShortestPath { nodes, arcs, cost })
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, usize, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1)).then_with(|| o.2.cmp(&self.2))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_arc() {
        let mut g = FlowGraph::new(2);
        g.add_arc(0, 1, 3, 0.0);
        assert_eq!(max_flow(&g, 0, 1).0, 3);
    }

    #[test]
    fn diamond() {
        let mut g = FlowGraph::new(4);
        for (a, b) in [(0, 1), (0, 2), (1, 3), (2, 3)] {
            g.add_arc(a, b, 1, 1.0);
        }
        let (v, f) = max_flow(&g, 0, 3);
        assert_eq!(v, 2);
        let paths = flow_decomposition(&g, &f, 0, 3).unwrap();
        assert_eq!(paths.len(), 2);
        let mut used: Vec<usize> = paths.iter().flatten().map(|&(i, _)| i).collect();
        used.sort();
        assert_eq!(used, vec![0, 1, 2, 3]);
    }

    #[test]
    fn parallel_costs() {
        let mut g = FlowGraph::new(2);
        g.add_arc(0, 1, 1, 1.0);
        g.add_arc(0, 1, 1, 5.0);
        let one = min_cost_flow(&g, 0, 1, Some(1)).unwrap();
        assert_eq!((one.value, one.cost), (1, 1.0));
        let two = min_cost_max_flow(&g, 0, 1).unwrap();
        assert_eq!((two.value, two.cost), (2, 6.0));
    }

    #[test]
    fn negative_cycle_rejected() {
        let mut g = FlowGraph::new(3);
        g.add_arc(0, 1, 1, 1.0);
        g.add_arc(1, 2, 1, -3.0);
        g.add_arc(2, 1, 1, 1.0);
        assert!(matches!(min_cost_max_flow(&g, 0, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn undirected_shares_capacity() {
        // Two sources pushing opposite ways through one width-1 edge.
        let mut g = FlowGraph::new(4);
        g.add_arc(0, 1, 1, 0.0);
        g.add_arc(0, 2, 1, 0.0);
        g.add_edge(1, 2, 1, 0.0);
        g.add_arc(1, 3, 0, 0.0);
        g.add_arc(2, 3, 1, 0.0);
        assert_eq!(max_flow(&g, 0, 3).0, 1);
    }

    #[test]
    fn decomposition_drops_cycle() {
        let mut g = FlowGraph::new(4);
        g.add_arc(0, 1, 1, 0.0);
        g.add_arc(1, 2, 1, 0.0);
        g.add_arc(2, 1, 1, 0.0);
        g.add_arc(1, 3, 1, 0.0);
        let paths = flow_decomposition(&g, &[1, 1, 1, 1], 0, 3).unwrap();
        assert_eq!(paths, vec![vec![(0, true), (3, true)]]);
        assert!(flow_decomposition(&g, &[1, 0, 0, 0], 0, 3).is_err());
    }

    fn line_edges(costs: Vec<Vec<(usize, usize, f64)>>) -> impl FnMut(usize, &mut Vec<(usize, usize, f64)>) {
        move |u, out| out.extend(costs[u].iter().copied())
    }

    #[test]
    fn dijkstra_endpoint_overlap() {
        let r = modified_dijkstra(2, &[(0, 0.5)], &[(0, 0.25)], line_edges(vec![vec![], vec![]])).unwrap();
        assert!(r.arcs.is_empty());
        assert_eq!(r.cost, 0.75);
    }

    #[test]
    fn dijkstra_picks_cheaper_total() {
        // 0 - 1 - 2 with unit arcs; target 1 exit 10, target 2 exit 0.
        let adj = vec![vec![(1, 0, 1.0)], vec![(0, 0, 1.0), (2, 1, 1.0)], vec![(1, 1, 1.0)]];
        let r = modified_dijkstra(3, &[(0, 0.0)], &[(1, 10.0), (2, 0.0)], line_edges(adj)).unwrap();
        assert_eq!(r.nodes, vec![0, 1, 2]);
        assert_eq!(r.cost, 2.0);
    }

    #[test]
    fn dijkstra_unreachable() {
        let r = modified_dijkstra(2, &[(0, 0.0)], &[(1, 0.0)], line_edges(vec![vec![], vec![]]));
        assert!(matches!(r, Err(Error::NoPath)));
    }
}
