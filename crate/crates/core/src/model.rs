//! Networks, graph states, tasks, flow strategies and resource counters.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, violated, Error, Result};

pub type NodeId = usize;
pub type VertexId = usize;
pub type ChannelId = usize;

/// Cost comparisons treat values closer than this as equal.
pub const COST_EPS: f64 = 1e-9;

/// Stand-in for an unusable (probability zero) link.
pub const INFINITE_COST: f64 = f64::INFINITY;

/// Long-term memory budget of a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Memory {
    Limited(u32),
    #[default]
    Unlimited,
}

impl Memory {
    pub fn capacity(self) -> Option<u32> {
        match self {
            Memory::Limited(m) => Some(m),
            Memory::Unlimited => None,
        }
    }

    pub fn admits(self, qubits: u64) -> bool {
        match self {
            Memory::Limited(m) => qubits <= m as u64,
            Memory::Unlimited => true,
        }
    }

    pub fn is_zero(self) -> bool {
        self == Memory::Limited(0)
    }
}

impl fmt::Display for Memory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Memory::Limited(m) => write!(f, "{m}"),
            Memory::Unlimited => f.write_str("unlimited"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MemoryRepr {
    Count(u32),
    Word(String),
}

impl Serialize for Memory {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Memory::Limited(m) => MemoryRepr::Count(m),
            Memory::Unlimited => MemoryRepr::Word("unlimited".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Memory {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match MemoryRepr::deserialize(d)? {
            MemoryRepr::Count(m) => Ok(Memory::Limited(m)),
            MemoryRepr::Word(w) if w.eq_ignore_ascii_case("unlimited") => Ok(Memory::Unlimited),
            MemoryRepr::Word(w) => Err(serde::de::Error::custom(format!(
                "memory must be a count or \"unlimited\", got {w:?}"
            ))),
        }
    }
}

/// An undirected quantum channel. `width` parallel Bell-pair attempts per shot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub endpoints: [NodeId; 2],
    pub width: u32,
    pub prob: f64,
    /// Saved Bell pairs re-enter planning as channels that do not renew.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub one_shot: bool,
}

impl Channel {
    pub fn new(a: NodeId, b: NodeId, width: u32, prob: f64) -> Self {
        Channel { endpoints: [a, b], width, prob, one_shot: false }
    }

    pub fn other(&self, n: NodeId) -> NodeId {
        if self.endpoints[0] == n {
            self.endpoints[1]
        } else {
            self.endpoints[0]
        }
    }

    pub fn touches(&self, n: NodeId) -> bool {
        self.endpoints[0] == n || self.endpoints[1] == n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    n_nodes: usize,
    channels: Vec<Channel>,
    memory: Vec<Memory>,
    cz_prob: f64,
    adjacency: Vec<Vec<(NodeId, ChannelId)>>,
}

impl Network {
    pub fn new(n_nodes: usize, channels: Vec<Channel>, memory: Vec<Memory>, cz_prob: f64) -> Result<Self> {
        if memory.len() != n_nodes {
            return invalid(format!("{} memory entries for {} nodes", memory.len(), n_nodes));
        }
        if !(cz_prob > 0.0 && cz_prob <= 1.0) {
            return invalid(format!("cz_prob {cz_prob} outside (0,1]"));
        }
        let mut seen = BTreeSet::new();
        for (i, c) in channels.iter().enumerate() {
            let [a, b] = c.endpoints;
            if a >= n_nodes || b >= n_nodes {
                return invalid(format!("channel {i} endpoint out of range"));
            }
            if a == b {
                return invalid(format!("channel {i} is a self-loop"));
            }
            if c.width == 0 {
                return invalid(format!("channel {i} has zero width"));
            }
            if !(c.prob > 0.0 && c.prob <= 1.0) {
                return invalid(format!("channel {i} probability {} outside (0,1]", c.prob));
            }
            if !seen.insert((a.min(b), a.max(b), c.one_shot)) {
                return invalid(format!("duplicate channel between {a} and {b}"));
            }
        }
        let mut adjacency = vec![Vec::new(); n_nodes];
        for (i, c) in channels.iter().enumerate() {
            let [a, b] = c.endpoints;
            adjacency[a].push((b, i));
            adjacency[b].push((a, i));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        Ok(Network { n_nodes, channels, memory, cz_prob, adjacency })
    }

    /// Unlimited memory everywhere, P_s = 1.
    pub fn simple(n_nodes: usize, channels: Vec<Channel>) -> Result<Self> {
        Network::new(n_nodes, channels, vec![Memory::Unlimited; n_nodes], 1.0)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }
    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }
    pub fn channel(&self, c: ChannelId) -> &Channel {
        &self.channels[c]
    }
    pub fn memory(&self, n: NodeId) -> Memory {
        self.memory[n]
    }
    pub fn memories(&self) -> &[Memory] {
        &self.memory
    }
    pub fn cz_prob(&self) -> f64 {
        self.cz_prob
    }

    /// Neighbours of `n` as (node, channel), sorted by node then channel id.
    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, ChannelId)] {
        &self.adjacency[n]
    }

    pub fn channel_between(&self, a: NodeId, b: NodeId) -> Option<ChannelId> {
        self.adjacency[a].iter().find(|&&(m, _)| m == b).map(|&(_, c)| c)
    }

    pub fn with_memory(&self, memory: Vec<Memory>) -> Result<Self> {
        Network::new(self.n_nodes, self.channels.clone(), memory, self.cz_prob)
    }

    pub fn with_channels(&self, channels: Vec<Channel>) -> Result<Self> {
        Network::new(self.n_nodes, channels, self.memory.clone(), self.cz_prob)
    }

    pub fn with_cz_prob(&self, cz_prob: f64) -> Result<Self> {
        Network::new(self.n_nodes, self.channels.clone(), self.memory.clone(), cz_prob)
    }

    /// Copy with every channel probability replaced by `p`.
    pub fn with_uniform_prob(&self, p: f64) -> Result<Self> {
        let chans = self.channels.iter().map(|c| Channel { prob: p, ..c.clone() }).collect();
        self.with_channels(chans)
    }

    pub fn is_connected(&self) -> bool {
        if self.n_nodes == 0 {
            return true;
        }
        let mut seen = vec![false; self.n_nodes];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n_nodes
    }

    pub fn mean_channel_prob(&self) -> f64 {
        if self.channels.is_empty() {
            return 0.0;
        }
        self.channels.iter().map(|c| c.prob).sum::<f64>() / self.channels.len() as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphStateRepr", into = "GraphStateRepr")]
pub struct GraphState {
    vertices: BTreeSet<VertexId>,
    edges: BTreeSet<(VertexId, VertexId)>,
}

#[derive(Serialize, Deserialize)]
struct GraphStateRepr {
    vertices: Vec<VertexId>,
    edges: Vec<[VertexId; 2]>,
}

impl TryFrom<GraphStateRepr> for GraphState {
    type Error = Error;
    fn try_from(r: GraphStateRepr) -> Result<Self> {
        GraphState::new(r.vertices, r.edges.into_iter().map(|[a, b]| (a, b)))
    }
}

impl From<GraphState> for GraphStateRepr {
    fn from(g: GraphState) -> Self {
        GraphStateRepr {
            vertices: g.vertices.into_iter().collect(),
            edges: g.edges.into_iter().map(|(a, b)| [a, b]).collect(),
        }
    }
}

impl GraphState {
    pub fn new(
        vertices: impl IntoIterator<Item = VertexId>,
        edges: impl IntoIterator<Item = (VertexId, VertexId)>,
    ) -> Result<Self> {
        let vertices: BTreeSet<_> = vertices.into_iter().collect();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return invalid(format!("graph-state self-loop at {a}"));
            }
            if !vertices.contains(&a) || !vertices.contains(&b) {
                return invalid(format!("edge ({a},{b}) has an undeclared endpoint"));
            }
            if !set.insert((a.min(b), a.max(b))) {
                return invalid(format!("duplicate edge ({a},{b})"));
            }
        }
        Ok(GraphState { vertices, edges: set })
    }

    /// Vertices `0..n` with the given edges.
    pub fn on(n: usize, edges: &[(VertexId, VertexId)]) -> Result<Self> {
        GraphState::new(0..n, edges.iter().copied())
    }

    pub fn vertices(&self) -> &BTreeSet<VertexId> {
        &self.vertices
    }
    pub fn edges(&self) -> &BTreeSet<(VertexId, VertexId)> {
        &self.edges
    }
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn has_edge(&self, a: VertexId, b: VertexId) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn neighbors(&self, v: VertexId) -> Vec<VertexId> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| if a == v { Some(b) } else if b == v { Some(a) } else { None })
            .collect()
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    pub fn remove_edge(&mut self, a: VertexId, b: VertexId) -> bool {
        self.edges.remove(&(a.min(b), a.max(b)))
    }

    pub fn remove_vertex(&mut self, v: VertexId) {
        self.vertices.remove(&v);
        self.edges.retain(|&(a, b)| a != v && b != v);
    }

    /// Drop vertices that carry no edge.
    pub fn without_isolated(&self) -> GraphState {
        let used: BTreeSet<_> = self.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
        GraphState { vertices: used, edges: self.edges.clone() }
    }
}

/// Vertex → nodes holding it. The first node is the one fixed by the task.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment(BTreeMap<VertexId, Vec<NodeId>>);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AssignRepr {
    One(NodeId),
    Many(Vec<NodeId>),
}

impl Serialize for Assignment {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m: BTreeMap<VertexId, AssignRepr> = self
            .0
            .iter()
            .map(|(&v, ns)| {
                let r = if ns.len() == 1 { AssignRepr::One(ns[0]) } else { AssignRepr::Many(ns.clone()) };
                (v, r)
            })
            .collect();
        m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Assignment {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = BTreeMap::<VertexId, AssignRepr>::deserialize(d)?;
        let mut out = BTreeMap::new();
        for (v, r) in m {
            let ns = match r {
                AssignRepr::One(n) => vec![n],
                AssignRepr::Many(ns) if !ns.is_empty() => ns,
                AssignRepr::Many(_) => {
                    return Err(serde::de::Error::custom(format!("vertex {v} has an empty node set")))
                }
            };
            out.insert(v, ns);
        }
        Ok(Assignment(out))
    }
}

impl Assignment {
    pub fn new() -> Self {
        Assignment(BTreeMap::new())
    }

    pub fn from_primary(pairs: impl IntoIterator<Item = (VertexId, NodeId)>) -> Self {
        Assignment(pairs.into_iter().map(|(v, n)| (v, vec![n])).collect())
    }

    /// Vertex `i` on node `nodes[i]`.
    pub fn from_slice(nodes: &[NodeId]) -> Self {
        Assignment::from_primary(nodes.iter().copied().enumerate())
    }

    pub fn primary(&self, v: VertexId) -> Option<NodeId> {
        self.0.get(&v).map(|ns| ns[0])
    }

    pub fn nodes(&self, v: VertexId) -> &[NodeId] {
        self.0.get(&v).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn set(&mut self, v: VertexId, nodes: Vec<NodeId>) {
        assert!(!nodes.is_empty(), "assignment node set must be non-empty");
        self.0.insert(v, nodes);
    }

    /// Add a holder node, keeping the primary first and no duplicates.
    pub fn extend(&mut self, v: VertexId, n: NodeId) {
        let ns = self.0.entry(v).or_default();
        if !ns.contains(&n) {
            ns.push(n);
        }
    }

    pub fn remove(&mut self, v: VertexId) {
        self.0.remove(&v);
    }

    pub fn iter(&self) -> impl Iterator<Item = (VertexId, &[NodeId])> {
        self.0.iter().map(|(&v, ns)| (v, ns.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// How many vertices list `n` among their holders.
    pub fn load(&self, n: NodeId) -> usize {
        self.0.values().filter(|ns| ns.contains(&n)).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTask {
    pub network: Network,
    pub graph_state: GraphState,
    pub assignment: Assignment,
}

impl DistributionTask {
    pub fn new(network: Network, graph_state: GraphState, assignment: Assignment) -> Result<Self> {
        let t = DistributionTask { network, graph_state, assignment };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<()> {
        let dom: BTreeSet<_> = self.assignment.iter().map(|(v, _)| v).collect();
        if &dom != self.graph_state.vertices() {
            return invalid("assignment domain differs from the graph-state vertex set");
        }
        for (v, ns) in self.assignment.iter() {
            if ns.is_empty() {
                return invalid(format!("vertex {v} has no node"));
            }
            if let Some(&n) = ns.iter().find(|&&n| n >= self.network.n_nodes()) {
                return invalid(format!("vertex {v} assigned to unknown node {n}"));
            }
        }
        Ok(())
    }

    /// Isolated vertices need no network resources; drop them.
    pub fn preprocessed(&self) -> DistributionTask {
        let gs = self.graph_state.without_isolated();
        let mut asg = Assignment::new();
        for &v in gs.vertices() {
            asg.set(v, self.assignment.nodes(v).to_vec());
        }
        DistributionTask { network: self.network.clone(), graph_state: gs, assignment: asg }
    }

    pub fn alpha(&self, v: VertexId) -> NodeId {
        self.assignment.primary(v).expect("vertex assigned")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: TaskFile = serde_json::from_str(s)?;
        f.into_task()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&TaskFile::from_task(self)).expect("task serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum MemorySpec {
    All(Memory),
    PerNode(Vec<Memory>),
}

/// On-disk task schema.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    nodes: usize,
    channels: Vec<Channel>,
    #[serde(default = "default_memory")]
    memory: MemorySpec,
    #[serde(default = "one")]
    cz_prob: f64,
    graph_state: GraphState,
    assignment: Assignment,
}

fn default_memory() -> MemorySpec {
    MemorySpec::All(Memory::Unlimited)
}

fn one() -> f64 {
    1.0
}

impl TaskFile {
    pub fn into_task(self) -> Result<DistributionTask> {
        let memory = match self.memory {
            MemorySpec::All(m) => vec![m; self.nodes],
            MemorySpec::PerNode(v) => v,
        };
        let net = Network::new(self.nodes, self.channels, memory, self.cz_prob)?;
        DistributionTask::new(net, self.graph_state, self.assignment)
    }

    pub fn from_task(t: &DistributionTask) -> Self {
        let mem = t.network.memories();
        let memory = if mem.iter().all(|&m| m == mem[0]) && !mem.is_empty() {
            MemorySpec::All(mem[0])
        } else {
            MemorySpec::PerNode(mem.to_vec())
        };
        TaskFile {
            nodes: t.network.n_nodes(),
            channels: t.network.channels().to_vec(),
            memory,
            cz_prob: t.network.cz_prob(),
            graph_state: t.graph_state.clone(),
            assignment: t.assignment.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    BellPair,
    Memory,
}

/// Per-vertex integer flows of one shot.
///
/// Keys are `(link, vertex)`. For Bell strategies the link is a channel and
/// positive flow runs from `endpoints[0]` to `endpoints[1]`. For memory
/// strategies the link is a node and positive flow runs from slot `shot` up to
/// slot `shot + 1`. The reversed orientation is implied, so antisymmetry holds
/// by construction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotStrategy {
    pub kind: StrategyKind,
    pub shot: usize,
    #[serde(with = "flow_entries")]
    pub flows: BTreeMap<(usize, VertexId), i32>,
}

mod flow_entries {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        link: usize,
        vertex: VertexId,
        flow: i32,
    }

    pub fn serialize<S: Serializer>(
        m: &BTreeMap<(usize, VertexId), i32>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<Entry> = m.iter().map(|(&(link, vertex), &flow)| Entry { link, vertex, flow }).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<BTreeMap<(usize, VertexId), i32>, D::Error> {
        let v = Vec::<Entry>::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.link, e.vertex), e.flow)).collect())
    }
}

impl ShotStrategy {
    pub fn new(kind: StrategyKind, shot: usize) -> Self {
        ShotStrategy { kind, shot, flows: BTreeMap::new() }
    }

    pub fn get(&self, link: usize, v: VertexId) -> i32 {
        self.flows.get(&(link, v)).copied().unwrap_or(0)
    }

    /// Flow on the link oriented `forward` (canonical) or against it.
    pub fn oriented(&self, link: usize, v: VertexId, forward: bool) -> i32 {
        let f = self.get(link, v);
        if forward {
            f
        } else {
            -f
        }
    }

    pub fn add(&mut self, link: usize, v: VertexId, delta: i32) {
        let e = self.flows.entry((link, v)).or_insert(0);
        *e += delta;
        if *e == 0 {
            self.flows.remove(&(link, v));
        }
    }

    /// Sum over vertices of |flow| on one link.
    pub fn load(&self, link: usize) -> u64 {
        self.flows.range((link, 0)..(link + 1, 0)).map(|(_, f)| f.unsigned_abs() as u64).sum()
    }

    pub fn total(&self) -> u64 {
        self.flows.values().map(|f| f.unsigned_abs() as u64).sum()
    }

    pub fn links(&self) -> BTreeSet<usize> {
        self.flows.keys().map(|&(l, _)| l).collect()
    }

    pub fn check_capacity(&self, net: &Network) -> Result<()> {
        for l in self.links() {
            let load = self.load(l);
            match self.kind {
                StrategyKind::BellPair => {
                    if l >= net.channels().len() {
                        return violated(format!("shot {}: unknown channel {l}", self.shot));
                    }
                    let w = net.channel(l).width as u64;
                    if load > w {
                        return violated(format!("shot {}: channel {l} carries {load} > width {w}", self.shot));
                    }
                }
                StrategyKind::Memory => {
                    if l >= net.n_nodes() {
                        return violated(format!("shot {}: unknown node {l}", self.shot));
                    }
                    if !net.memory(l).admits(load) {
                        return violated(format!(
                            "slot {}: node {l} stores {load} > memory {}",
                            self.shot,
                            net.memory(l)
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One elementary arc of the space-time view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Arc {
    /// Bell pair on `channel` during `shot`, oriented `from` → `to`.
    Bell { channel: ChannelId, shot: usize, from: NodeId, to: NodeId },
    /// Storage of a qubit at `node` between slot `slot` and `slot + 1`.
    Memory { node: NodeId, slot: usize, up: bool },
}

impl Arc {
    pub fn shot(&self) -> usize {
        match *self {
            Arc::Bell { shot, .. } => shot,
            Arc::Memory { slot, .. } => slot,
        }
    }

    /// Space-time endpoints as ((node, slot), (node, slot)).
    pub fn ends(&self) -> ((NodeId, usize), (NodeId, usize)) {
        match *self {
            Arc::Bell { shot, from, to, .. } => ((from, shot), (to, shot)),
            Arc::Memory { node, slot, up: true } => ((node, slot), (node, slot + 1)),
            Arc::Memory { node, slot, up: false } => ((node, slot + 1), (node, slot)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PathLabel {
    /// Carries a vertex from a root to its assigned node.
    Deliver { vertex: VertexId },
    /// Implements one graph-state edge.
    Edge { v1: VertexId, v2: VertexId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub arc: Arc,
    pub vertex: VertexId,
}

/// Executable path: arcs in traversal order, each owned by one vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    pub label: PathLabel,
    /// Shot whose Bell pairs the path mainly consumes (first Bell hop).
    pub shot: usize,
    pub hops: Vec<Hop>,
    /// Space-time points where fusions happen.
    pub fusions: Vec<(NodeId, usize)>,
}

impl PlannedPath {
    pub fn bell_channels(&self) -> impl Iterator<Item = (ChannelId, usize)> + '_ {
        self.hops.iter().filter_map(|h| match h.arc {
            Arc::Bell { channel, shot, .. } => Some((channel, shot)),
            _ => None,
        })
    }

    pub fn cz_count(&self) -> usize {
        self.fusions.len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub bell: Vec<ShotStrategy>,
    pub memory: Vec<ShotStrategy>,
    pub paths: Vec<PlannedPath>,
}

impl Solution {
    pub fn empty(n_shots: usize) -> Self {
        Solution {
            bell: (1..=n_shots).map(|k| ShotStrategy::new(StrategyKind::BellPair, k)).collect(),
            memory: (1..=n_shots).map(|k| ShotStrategy::new(StrategyKind::Memory, k)).collect(),
            paths: Vec::new(),
        }
    }

    pub fn n_shots(&self) -> usize {
        self.bell.len()
    }

    /// Add one unit of `v` flow along `arc`.
    ///
    /// Flow against an existing opposite flow of the same vertex is dropped:
    /// the earlier direction is kept and the arc is not counted twice.
    pub fn push_arc(&mut self, net: &Network, arc: Arc, v: VertexId) {
        let (strat, link, delta) = match arc {
            Arc::Bell { channel, shot, from, .. } => {
                let d = if net.channel(channel).endpoints[0] == from { 1 } else { -1 };
                (&mut self.bell[shot - 1], channel, d)
            }
            Arc::Memory { node, slot, up } => (&mut self.memory[slot - 1], node, if up { 1 } else { -1 }),
        };
        let cur = strat.get(link, v);
        if cur * delta < 0 {
            return;
        }
        strat.add(link, v, delta);
    }

    /// Append a path and its flows.
    pub fn push_path(&mut self, net: &Network, path: PlannedPath) {
        for h in &path.hops {
            self.push_arc(net, h.arc, h.vertex);
        }
        self.paths.push(path);
    }

    pub fn check(&self, net: &Network) -> Result<()> {
        if self.bell.len() != self.memory.len() {
            return violated("bell and memory strategy lists differ in length");
        }
        for (i, (b, m)) in self.bell.iter().zip(&self.memory).enumerate() {
            if b.kind != StrategyKind::BellPair || m.kind != StrategyKind::Memory {
                return violated(format!("strategy kinds out of place at shot {}", i + 1));
            }
            if b.shot != i + 1 || m.shot != i + 1 {
                return violated(format!("shot index mismatch at position {}", i + 1));
            }
            b.check_capacity(net)?;
            m.check_capacity(net)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub shots: u64,
    pub bell_pairs: u64,
    pub cum_memory: u64,
}

impl std::ops::Add for Metrics {
    type Output = Metrics;
    fn add(self, o: Metrics) -> Metrics {
        Metrics {
            shots: self.shots + o.shots,
            bell_pairs: self.bell_pairs + o.bell_pairs,
            cum_memory: self.cum_memory + o.cum_memory,
        }
    }
}

/// Shot count plus Bell-pair and memory usage of a solution.
///
/// Flows are stored once per unordered link, so the half-sum over both
/// orientations equals the plain sum of magnitudes.
pub fn compute_metrics(sol: &Solution, net: &Network) -> Result<Metrics> {
    sol.check(net)?;
    Ok(Metrics {
        shots: sol.n_shots() as u64,
        bell_pairs: sol.bell.iter().map(ShotStrategy::total).sum(),
        cum_memory: sol.memory.iter().map(ShotStrategy::total).sum(),
    })
}

/// Probability that a channel of `width` attempts yields more than `occupied`
/// Bell pairs.
pub fn channel_success_prob(p: f64, width: u32, occupied: u32) -> Result<f64> {
    if occupied > width {
        return invalid(format!("occupied {occupied} exceeds width {width}"));
    }
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("probability {p} outside [0,1]"));
    }
    if occupied == width {
        return Ok(0.0);
    }
    let q = 1.0 - p;
    let mut coef = 1.0f64;
    let mut total = 0.0;
    for i in 0..=width {
        if i > 0 {
            coef = coef * (width - i + 1) as f64 / i as f64;
        }
        if i > occupied {
            total += coef * p.powi(i as i32) * q.powi((width - i) as i32);
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// −Σ ln p_i − cz_count · ln P_s. Any zero probability gives `INFINITE_COST`.
pub fn path_cost(link_probs: &[f64], cz_count: usize, cz_prob: f64) -> f64 {
    if cz_prob <= 0.0 || link_probs.iter().any(|&p| p <= 0.0) {
        return INFINITE_COST;
    }
    -link_probs.iter().map(|p| p.ln()).sum::<f64>() - cz_count as f64 * cz_prob.ln()
}

/// Cost of one link given current occupancy, including its fusion.
pub fn link_cost(p: f64, width: u32, occupied: u32, cz_prob: f64) -> f64 {
    match channel_success_prob(p, width, occupied) {
        Ok(q) if q > 0.0 => -q.ln() - cz_prob.ln(),
        _ => INFINITE_COST,
    }
}

pub fn cost_lt(a: f64, b: f64) -> bool {
    a < b - COST_EPS
}

pub fn cost_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= COST_EPS || (a.is_infinite() && b.is_infinite() && a.signum() == b.signum())
}
