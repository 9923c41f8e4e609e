//! Path-level recovery: detours for the current shot, per-node qubit switch
//! selection by min-cost flow, the two-shot save decision, and the analytic
//! save-or-retry cycle model.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::flows::{flow_decomposition, min_cost_flow, modified_dijkstra, FlowGraph};
use crate::model::{channel_success_prob, ChannelId, Network, NodeId};
use crate::spacetime::default_memory_cost;

/// A planned channel path. `channels[i]` joins `nodes[i]` and `nodes[i+1]`;
/// `rank[i]` is the path's 1-based priority among users of that channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MainPath {
    pub nodes: Vec<NodeId>,
    pub channels: Vec<ChannelId>,
    pub rank: Vec<u32>,
}

impl MainPath {
    pub fn new(nodes: Vec<NodeId>, channels: Vec<ChannelId>) -> Result<Self> {
        if nodes.len() != channels.len() + 1 {
            return invalid("a path needs one more node than channels");
        }
        let rank = vec![1; channels.len()];
        Ok(MainPath { nodes, channels, rank })
    }

    pub fn hops(&self) -> usize {
        self.channels.len()
    }

    pub fn position(&self, n: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&m| m == n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPath {
    /// Index on the main path where the detour leaves.
    pub start: usize,
    /// Main-path hops bridged.
    pub span: usize,
    pub nodes: Vec<NodeId>,
    pub channels: Vec<ChannelId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryPlan {
    pub main: MainPath,
    pub paths: Vec<RecoveryPath>,
}

impl RecoveryPlan {
    pub fn bare(main: MainPath) -> Self {
        RecoveryPlan { main, paths: Vec::new() }
    }
}

/// Cheapest detours from every main-path node to its successors up to
/// `h_max` hops ahead. `free` holds the unreserved width per channel and is
/// reduced as detours are taken.
pub fn find_recovery_paths(main: &MainPath, net: &Network, free: &mut [u32], h_max: usize) -> RecoveryPlan {
    let mut paths = Vec::new();
    let on_main: BTreeSet<NodeId> = main.nodes.iter().copied().collect();
    for span in 1..=h_max.min(main.hops()) {
        for start in 0..=main.hops() - span {
            let (a, b) = (main.nodes[start], main.nodes[start + span]);
            let found = modified_dijkstra(net.n_nodes(), &[(a, 0.0)], &[(b, 0.0)], |u, out| {
                if u != a && on_main.contains(&u) {
                    return;
                }
                for &(v, c) in net.neighbors(u) {
                    if free[c] == 0 || (on_main.contains(&v) && v != b) {
                        continue;
                    }
                    let ch = net.channel(c);
                    out.push((v, c, -ch.prob.ln()));
                }
            });
            if let Ok(p) = found {
                for &c in &p.arcs {
                    free[c] -= 1;
                }
                paths.push(RecoveryPath { start, span, nodes: p.nodes, channels: p.arcs });
            }
        }
    }
    RecoveryPlan { main: main.clone(), paths }
}

/// Observed Bell successes per channel in the current shot. Channels not in
/// the map are unknown to the node holding this state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub known: BTreeMap<ChannelId, u32>,
}

impl LinkState {
    pub fn successes(&self, c: ChannelId) -> Option<u32> {
        self.known.get(&c).copied()
    }
}

/// A link of the residue network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkRef {
    Main(usize),
    /// (recovery path, hop on it)
    Rec(usize, usize),
}

#[derive(Clone, Copy, Debug)]
struct ResLink {
    id: LinkRef,
    ends: [NodeId; 2],
    cost: f64,
}

/// Prefer main links on cost ties.
const RECOVERY_BIAS: f64 = 1e-7;

/// State of main hop `i` given the link state: `Some(true)` if the path's
/// Bell pair exists, `Some(false)` if it does not, `None` if unknown.
pub fn main_hop_status(plan: &RecoveryPlan, ls: &LinkState, i: usize) -> Option<bool> {
    ls.successes(plan.main.channels[i]).map(|s| s >= plan.main.rank[i])
}

fn residue_links(plan: &RecoveryPlan, ls: &LinkState, net: &Network) -> Vec<ResLink> {
    let mut out = Vec::new();
    let m = &plan.main;
    for i in 0..m.hops() {
        let ch = net.channel(m.channels[i]);
        let cost = match main_hop_status(plan, ls, i) {
            Some(true) => 0.0,
            Some(false) => continue,
            None => {
                let o = m.rank[i].saturating_sub(1).min(ch.width);
                -channel_success_prob(ch.prob, ch.width, o).unwrap_or(0.0).ln()
            }
        };
        if cost.is_finite() {
            out.push(ResLink { id: LinkRef::Main(i), ends: [m.nodes[i], m.nodes[i + 1]], cost });
        }
    }
    for (r, p) in plan.paths.iter().enumerate() {
        for (j, &c) in p.channels.iter().enumerate() {
            let cost = -net.channel(c).prob.ln() + RECOVERY_BIAS;
            out.push(ResLink { id: LinkRef::Rec(r, j), ends: [p.nodes[j], p.nodes[j + 1]], cost });
        }
    }
    out
}

/// The two qubits a node joins. A side is `None` when the node is that end
/// of the path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Switch {
    pub toward_start: Option<LinkRef>,
    pub toward_end: Option<LinkRef>,
    /// Negative log probability of the chosen through-path.
    pub cost: f64,
}

/// Flow-network edge in a layered residue graph.
#[derive(Clone, Copy, Debug)]
enum Step {
    Link(LinkRef, usize),
    Memory,
}

struct Layered {
    graph: FlowGraph,
    steps: Vec<Option<Step>>,
    index: BTreeMap<(NodeId, usize), usize>,
}

impl Layered {
    fn new() -> Self {
        Layered { graph: FlowGraph::new(0), steps: Vec::new(), index: BTreeMap::new() }
    }
    fn id(&mut self, n: NodeId, layer: usize) -> usize {
        let len = self.index.len();
        *self.index.entry((n, layer)).or_insert(len)
    }
}

/// Route two disjoint paths from `node` to the main-path ends (one when
/// `node` is an end) and return the first step of each, keyed by end.
fn two_path_route(
    plan: &RecoveryPlan,
    node: NodeId,
    layers: &[Vec<ResLink>],
    memory: &[(NodeId, f64)],
) -> Result<Option<(BTreeMap<usize, Vec<Step>>, f64)>> {
    let m = &plan.main;
    let (first, last) = (m.nodes[0], *m.nodes.last().unwrap());
    let mut lg = Layered::new();
    let mut arcs: Vec<(usize, usize, f64, Option<Step>)> = Vec::new();
    let src = lg.id(node, 1);
    for (li, links) in layers.iter().enumerate() {
        for l in links {
            let a = lg.id(l.ends[0], li + 1);
            let b = lg.id(l.ends[1], li + 1);
            arcs.push((a, b, l.cost, Some(Step::Link(l.id, li + 1))));
        }
    }
    if layers.len() > 1 {
        for &(n, c) in memory {
            let a = lg.id(n, 1);
            let b = lg.id(n, 2);
            arcs.push((a, b, c, Some(Step::Memory)));
        }
    }
    let targets: Vec<NodeId> = [first, last].into_iter().filter(|&e| e != node).collect();
    let n_layers = layers.len();
    let mut ends = Vec::new();
    for &e in &targets {
        for layer in 1..=n_layers {
            ends.push((lg.id(e, layer), e));
        }
    }
    let n = lg.index.len();
    let sink = n;
    let per_end: Vec<usize> = (0..targets.len()).map(|i| n + 1 + i).collect();
    lg.graph = FlowGraph::new(n + 1 + targets.len());
    for &(a, b, c, s) in &arcs {
        lg.graph.add_edge(a, b, 1, c);
        lg.steps.push(s);
    }
    for &(x, e) in &ends {
        let i = targets.iter().position(|&t| t == e).unwrap();
        lg.graph.add_arc(x, per_end[i], 1, 0.0);
        lg.steps.push(None);
    }
    for &pe in &per_end {
        lg.graph.add_arc(pe, sink, 1, 0.0);
        lg.steps.push(None);
    }
    let need = targets.len() as i64;
    let f = min_cost_flow(&lg.graph, src, sink, Some(need))?;
    if f.value < need {
        return Ok(None);
    }
    let mut out = BTreeMap::new();
    for p in flow_decomposition(&lg.graph, &f.flow, src, sink)? {
        let last_arc = p[p.len() - 2].0;
        let end_node = targets[per_end.iter().position(|&x| x == lg.graph.arcs()[last_arc].to).unwrap()];
        let steps: Vec<Step> = p.iter().filter_map(|&(a, _)| lg.steps[a]).collect();
        let side = if end_node == first { 0 } else { 1 };
        out.insert(side, steps);
    }
    Ok(Some((out, f.cost)))
}

fn first_link(steps: Option<&Vec<Step>>) -> Option<Option<LinkRef>> {
    match steps.and_then(|s| s.first()) {
        None => Some(None),
        Some(Step::Link(l, 1)) => Some(Some(*l)),
        _ => None,
    }
}

/// Expected-union switch selection for `node` on the main path.
pub fn eum_switch(plan: &RecoveryPlan, ls: &LinkState, net: &Network, node: NodeId) -> Result<Option<Switch>> {
    if plan.main.position(node).is_none() {
        return invalid(format!("node {node} is not on the main path"));
    }
    let layer = residue_links(plan, ls, net);
    let Some((paths, cost)) = two_path_route(plan, node, &[layer], &[])? else { return Ok(None) };
    let a = first_link(paths.get(&0)).flatten();
    let b = first_link(paths.get(&1)).flatten();
    Ok(Some(Switch { toward_start: a, toward_end: b, cost }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StEumParams {
    pub mem_cost: f64,
    /// Second-shot probability multiplier; defaults to the smallest channel
    /// probability on the main path.
    pub prefactor: Option<f64>,
}

impl Default for StEumParams {
    fn default() -> Self {
        StEumParams { mem_cost: default_memory_cost(), prefactor: None }
    }
}

fn binomial_pmf(n: u32, k: u32, p: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Second-shot cost of main hop `i`.
fn retry_cost(plan: &RecoveryPlan, ls: &LinkState, net: &Network, i: usize) -> f64 {
    let ch = net.channel(plan.main.channels[i]);
    let o_s = plan.main.rank[i];
    let at = |c: u32| {
        let o = o_s.saturating_sub(c + 1).min(ch.width);
        -channel_success_prob(ch.prob, ch.width, o).unwrap_or(0.0).ln()
    };
    match ls.successes(plan.main.channels[i]) {
        Some(c) => at(c),
        None => (0..=ch.width).map(|c| binomial_pmf(ch.width, c, ch.prob) * at(c)).sum(),
    }
}

/// Two-shot decision for `node`: the switch to perform now (if any) and
/// whether to keep its qubit for the next shot. `has_memory` lists the
/// main-path nodes with free long-term memory.
pub fn st_eum_decide(
    plan: &RecoveryPlan,
    ls: &LinkState,
    net: &Network,
    node: NodeId,
    has_memory: &BTreeSet<NodeId>,
    params: StEumParams,
) -> Result<(Option<Switch>, bool)> {
    if plan.main.position(node).is_none() {
        return invalid(format!("node {node} is not on the main path"));
    }
    if !params.mem_cost.is_finite() || !has_memory.contains(&node) {
        return Ok((eum_switch(plan, ls, net, node)?, false));
    }
    if params.mem_cost < 0.0 {
        return invalid("memory cost must be non-negative");
    }
    let m = &plan.main;
    let pref = params
        .prefactor
        .unwrap_or_else(|| m.channels.iter().map(|&c| net.channel(c).prob).fold(1.0, f64::min));
    // Principal path over two shots.
    let shot1 = residue_links(plan, ls, net);
    let mut shot2 = Vec::new();
    for i in 0..m.hops() {
        let ch = net.channel(m.channels[i]);
        let q = channel_success_prob(ch.prob, ch.width, 0)? * pref;
        shot2.push(ResLink { id: LinkRef::Main(i), ends: [m.nodes[i], m.nodes[i + 1]], cost: -q.ln() });
    }
    for (r, p) in plan.paths.iter().enumerate() {
        for (j, &c) in p.channels.iter().enumerate() {
            let ch = net.channel(c);
            let q = channel_success_prob(ch.prob, ch.width, 0)? * pref;
            shot2.push(ResLink { id: LinkRef::Rec(r, j), ends: [p.nodes[j], p.nodes[j + 1]], cost: -q.ln() + RECOVERY_BIAS });
        }
    }
    let mem: Vec<(NodeId, f64)> = m.nodes.iter().filter(|n| has_memory.contains(n)).map(|&n| (n, params.mem_cost)).collect();
    let routed = two_path_route(plan, node, &[shot1.clone(), shot2], &mem)?;
    let Some((paths, cost)) = routed else { return Ok((None, false)) };
    let switch = match (first_link(paths.get(&0)), first_link(paths.get(&1))) {
        (Some(a), Some(b)) => Some(Switch { toward_start: a, toward_end: b, cost }),
        _ => None,
    };
    // First-shot links the principal path relies on.
    let used: BTreeSet<LinkRef> = paths
        .values()
        .flatten()
        .filter_map(|s| match s {
            Step::Link(l, 1) => Some(*l),
            _ => None,
        })
        .collect();
    let kept: Vec<ResLink> = shot1.into_iter().filter(|l| used.contains(&l.id)).collect();
    // Shortest path between the ends at the second shot over the kept
    // first-shot links, memory links and retried main channels.
    let nv = net.n_nodes();
    let id = |n: NodeId, layer: usize| (layer - 1) * nv + n;
    let mut edges: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); 2 * nv];
    let mut labels: Vec<Option<NodeId>> = Vec::new();
    let mut add = |a: usize, b: usize, c: f64, mem_node: Option<NodeId>, labels: &mut Vec<Option<NodeId>>| {
        let arc = labels.len();
        labels.push(mem_node);
        edges[a].push((b, arc, c));
        edges[b].push((a, arc, c));
    };
    for l in &kept {
        add(id(l.ends[0], 1), id(l.ends[1], 1), l.cost, None, &mut labels);
    }
    for &(n, c) in &mem {
        add(id(n, 1), id(n, 2), c, Some(n), &mut labels);
    }
    for i in 0..m.hops() {
        let c = retry_cost(plan, ls, net, i);
        if c.is_finite() {
            add(id(m.nodes[i], 2), id(m.nodes[i + 1], 2), c, None, &mut labels);
        }
    }
    let (a, b) = (m.nodes[0], *m.nodes.last().unwrap());
    // Path ends may finish in either shot.
    let sp = modified_dijkstra(
        2 * nv,
        &[(id(a, 1), 0.0), (id(a, 2), 0.0)],
        &[(id(b, 1), 0.0), (id(b, 2), 0.0)],
        |u, out| out.extend_from_slice(&edges[u]),
    );
    let save = match sp {
        Ok(p) => p.arcs.iter().any(|&arc| labels[arc] == Some(node)),
        Err(Error::NoPath) => false,
        Err(e) => return Err(e),
    };
    Ok((switch, save))
}

/// Analytic two-shot save-or-retry model on an n-link path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cum_per_cycle: f64,
    pub expected_cycles: f64,
    pub expected_total: f64,
    /// Expected cumulative memory without saving.
    pub baseline: f64,
    pub p_th: f64,
}

pub fn two_shot_cycle_stats(n: u32, p: f64) -> Result<CycleStats> {
    if n == 0 {
        return invalid("path needs at least one link");
    }
    if !(p > 0.0 && p <= 1.0) {
        return invalid(format!("probability {p} outside (0,1]"));
    }
    let nf = n as f64;
    let cum = nf + 3.0;
    let cycles = 1.0 / (p * (2.0 - p)).powf(nf);
    Ok(CycleStats {
        cum_per_cycle: cum,
        expected_cycles: cycles,
        expected_total: cum * cycles,
        baseline: 2.0 / p.powf(nf),
        p_th: 2.0 - (cum / 2.0).powf(1.0 / nf),
    })
}

/// Expected cycles when every link gets `k` tries per cycle.
pub fn k_shot_expected_cycles(n: u32, p: f64, k: u32) -> f64 {
    1.0 / (1.0 - (1.0 - p).powi(k as i32)).powi(n as i32)
}

/// Monte-Carlo means over `trials` runs of both strategies.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleSample {
    pub cycles: f64,
    pub save_memory: f64,
    pub retry_shots: f64,
    pub retry_memory: f64,
}

/// Simulate the save strategy (links kept across the two shots of a cycle)
/// and the plain retry strategy on an n-link path.
pub fn simulate_cycles<R: Rng>(n: u32, p: f64, trials: u32, rng: &mut R) -> Result<CycleSample> {
    let st = two_shot_cycle_stats(n, p)?;
    if trials == 0 {
        return invalid("need at least one trial");
    }
    let (mut cycles, mut shots) = (0u64, 0u64);
    for _ in 0..trials {
        loop {
            cycles += 1;
            let ok = (0..n).all(|_| rng.random_bool(p) || rng.random_bool(p));
            if ok {
                break;
            }
        }
        loop {
            shots += 1;
            if (0..n).all(|_| rng.random_bool(p)) {
                break;
            }
        }
    }
    let t = trials as f64;
    Ok(CycleSample {
        cycles: cycles as f64 / t,
        save_memory: st.cum_per_cycle * cycles as f64 / t,
        retry_shots: shots as f64 / t,
        retry_memory: 2.0 * shots as f64 / t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Channel;

    fn abc(extra: bool) -> Network {
        let mut ch = vec![Channel::new(0, 1, 1, 0.5), Channel::new(1, 2, 1, 0.5)];
        if extra {
            ch.push(Channel::new(0, 2, 1, 0.5));
        }
        Network::simple(3, ch).unwrap()
    }

    #[test]
    fn detours() {
        let main = MainPath::new(vec![0, 1, 2], vec![0, 1]).unwrap();
        let net = abc(false);
        let mut free = vec![0, 0];
        assert!(find_recovery_paths(&main, &net, &mut free, 2).paths.is_empty());
        let net = abc(true);
        let mut free = vec![0, 0, 1];
        let plan = find_recovery_paths(&main, &net, &mut free, 2);
        assert_eq!(plan.paths.len(), 1);
        assert_eq!((plan.paths[0].start, plan.paths[0].span, plan.paths[0].channels.clone()), (0, 2, vec![2]));
        assert_eq!(free[2], 0);
        let mut free = vec![0, 0, 1];
        assert!(find_recovery_paths(&main, &net, &mut free, 0).paths.is_empty());
    }

    #[test]
    fn switch_choices() {
        let net = abc(true);
        let main = MainPath::new(vec![0, 1, 2], vec![0, 1]).unwrap();
        let plan = RecoveryPlan { main: main.clone(), paths: vec![RecoveryPath { start: 0, span: 2, nodes: vec![0, 2], channels: vec![2] }] };
        let all = LinkState { known: BTreeMap::from([(0, 1), (1, 1), (2, 1)]) };
        let s = eum_switch(&plan, &all, &net, 1).unwrap().unwrap();
        assert_eq!((s.toward_start, s.toward_end), (Some(LinkRef::Main(0)), Some(LinkRef::Main(1))));
        // Second main link lost: node 0 routes through the detour.
        let broken = LinkState { known: BTreeMap::from([(0, 1), (1, 0)]) };
        let s = eum_switch(&plan, &broken, &net, 0).unwrap().unwrap();
        assert_eq!(s.toward_end, Some(LinkRef::Rec(0, 0)));
        assert!(eum_switch(&plan, &broken, &net, 1).unwrap().is_none());
        assert!(eum_switch(&RecoveryPlan::bare(main), &broken, &net, 0).unwrap().is_none());
        assert!(eum_switch(&plan, &all, &net, 7).is_err());
    }

    #[test]
    fn save_when_second_link_fails() {
        let net = Network::simple(3, vec![Channel::new(0, 1, 1, 0.3), Channel::new(1, 2, 1, 0.3)]).unwrap();
        let plan = RecoveryPlan::bare(MainPath::new(vec![0, 1, 2], vec![0, 1]).unwrap());
        let ls = LinkState { known: BTreeMap::from([(0, 1), (1, 0)]) };
        let mem: BTreeSet<NodeId> = [0, 1, 2].into();
        assert!(st_eum_decide(&plan, &ls, &net, 1, &mem, StEumParams::default()).unwrap().1);
        {
            let n = 2;
            assert!(!st_eum_decide(&plan, &ls, &net, n, &mem, StEumParams::default()).unwrap().1, "node {n}");
        }
        let ok = LinkState { known: BTreeMap::from([(0, 1), (1, 1)]) };
        for n in [0, 1, 2] {
            assert!(!st_eum_decide(&plan, &ok, &net, n, &mem, StEumParams::default()).unwrap().1);
        }
        let never = StEumParams { mem_cost: f64::INFINITY, prefactor: None };
        assert!(!st_eum_decide(&plan, &ls, &net, 1, &mem, never).unwrap().1);
    }

    #[test]
    fn cycle_formulas() {
        let s = two_shot_cycle_stats(2, 1.0).unwrap();
        assert_eq!((s.expected_total, s.baseline), (5.0, 2.0));
        let s = two_shot_cycle_stats(2, 0.5).unwrap();
        assert!((s.p_th - 0.4189).abs() < 1e-3);
        let at = two_shot_cycle_stats(2, s.p_th).unwrap();
        assert!((at.expected_total - at.baseline).abs() < 1e-9);
    }
}
