//! Adaptive execution. Each shot: plan on the current task, attempt the
//! first shot's Bell pairs, recover what can be recovered, fuse, then fold
//! the outcome back into the task.
//!
//! A plan whose shot went exactly as planned is kept and its next shot is
//! executed without replanning; any deviation triggers a replan.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{violated, Error, Result};
use crate::graphs::rng;
use crate::mgst::mgst_plan_all;
use crate::model::{
    Arc, Assignment, Channel, ChannelId, DistributionTask, GraphState, Memory, Metrics, Network, NodeId, PathLabel,
    Solution, VertexId,
};
use crate::p2pgsd::{p2pgsd_plan, MemoryStrategyKind};
use crate::recovery::{
    eum_switch, find_recovery_paths, st_eum_decide, LinkRef, LinkState, MainPath, RecoveryPlan,
    StEumParams, Switch,
};
use crate::stp2pgsd::{stp2pgsd_plan, StParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Planner {
    Mgst,
    P2p { mem: MemoryStrategyKind },
    StP2p { params: StParams },
}

impl Planner {
    pub fn name(&self) -> &'static str {
        match self {
            Planner::Mgst => "mgst",
            Planner::P2p { .. } => "p2pgsd",
            Planner::StP2p { .. } => "stp2pgsd",
        }
    }

    /// Memory strategy column; empty when not applicable.
    pub fn mem_name(&self) -> &'static str {
        match self {
            Planner::P2p { mem } => mem.name(),
            _ => "",
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Planner::StP2p { params } => params.variant.name(),
            _ => "",
        }
    }

    /// Plan `task` once and return the solution.
    pub fn plan(&self, task: &DistributionTask) -> Result<Solution> {
        Ok(match self {
            Planner::Mgst => crate::mgst::mgst_plan(task)?.solution,
            Planner::P2p { mem } => p2pgsd_plan(task, *mem)?.solution,
            Planner::StP2p { params } => stp2pgsd_plan(task, *params)?.solution,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub shot_cap: usize,
    pub eum: bool,
    pub st_eum: bool,
    pub h_max: usize,
    pub st_eum_params: StEumParams,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig { shot_cap: 200, eum: true, st_eum: false, h_max: 2, st_eum_params: StEumParams::default() }
    }
}

impl ProtocolConfig {
    pub fn no_recovery() -> Self {
        ProtocolConfig { eum: false, st_eum: false, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    InProgress,
    Success,
    Discarded,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::InProgress => "in_progress",
            Status::Success => "success",
            Status::Discarded => "discarded",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub shot: usize,
    pub replanned: bool,
    pub planned_paths: usize,
    /// (base channel, attempts, successes) for every attempted channel;
    /// saved pairs have no base channel.
    pub links: Vec<(Option<ChannelId>, u32, u32)>,
    pub recovered: usize,
    pub completed: Vec<PathLabel>,
    pub saved: Vec<(NodeId, NodeId)>,
    pub cz_failed: bool,
    pub bell_pairs: u64,
    pub memory: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub planner: Planner,
    pub seed: u64,
    pub shots: Vec<ShotRecord>,
    pub metrics: Metrics,
    pub status: Status,
    pub resets: usize,
}

impl ExecutionTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Part of a vertex's connection realised away from its holders.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VirtualVertex {
    pub source: VertexId,
    pub nodes: BTreeSet<NodeId>,
    /// Edges of the source completed through this component.
    pub carried: Vec<(VertexId, VertexId)>,
    /// Component nodes the plan keeps in memory.
    pub forwarding: BTreeSet<NodeId>,
}

/// 64-bit mix of a base seed with extra indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(x << 6).wrapping_add(x >> 2);
        x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

/// Channels of `base` with width left after `used`, and their base ids.
pub fn residual_network(base: &Network, used: &[u32]) -> Result<(Network, Vec<ChannelId>)> {
    let mut chans = Vec::new();
    let mut ids = Vec::new();
    for (i, c) in base.channels().iter().enumerate() {
        let left = c.width.saturating_sub(used.get(i).copied().unwrap_or(0));
        if left > 0 {
            chans.push(Channel { width: left, ..c.clone() });
            ids.push(i);
        }
    }
    Ok((base.with_channels(chans)?, ids))
}

struct ActivePlan {
    sol: Solution,
    net: Network,
    base_of: Vec<Option<ChannelId>>,
    next: usize,
    root: Option<NodeId>,
    /// Delivered vertices held from earlier plans.
    held_before: u64,
    residual: Network,
    failed: Vec<bool>,
    /// Per path and hop: Bell pair realised.
    realized: Vec<Vec<bool>>,
}

/// One contiguous run of a path's Bell hops in a shot.
struct Segment {
    path: usize,
    hops: Vec<usize>,
    main: MainPath,
}

/// Single-task execution state.
pub struct Engine {
    original: DistributionTask,
    planner: Planner,
    cfg: ProtocolConfig,
    rng: ChaCha8Rng,
    remaining: GraphState,
    /// Edges finished by a local gate; kept in the planner's view so its
    /// vertex set matches the original task.
    local_done: BTreeSet<(VertexId, VertexId)>,
    pending: BTreeSet<VertexId>,
    holders: BTreeMap<VertexId, Vec<NodeId>>,
    saved: Vec<(NodeId, NodeId)>,
    root: Option<NodeId>,
    delivered: BTreeSet<VertexId>,
    plan: Option<ActivePlan>,
    plan_time: Duration,
    pub trace: ExecutionTrace,
}

impl Engine {
    pub fn new(task: &DistributionTask, planner: Planner, cfg: ProtocolConfig, seed: u64) -> Result<Self> {
        task.check()?;
        let original = task.preprocessed();
        let mut e = Engine {
            remaining: original.graph_state.clone(),
            local_done: BTreeSet::new(),
            pending: BTreeSet::new(),
            holders: BTreeMap::new(),
            original,
            planner,
            cfg,
            rng: rng(seed),
            saved: Vec::new(),
            root: None,
            delivered: BTreeSet::new(),
            plan: None,
            plan_time: Duration::ZERO,
            trace: ExecutionTrace {
                planner,
                seed,
                shots: Vec::new(),
                metrics: Metrics::default(),
                status: Status::InProgress,
                resets: 0,
            },
        };
        e.reset();
        e.trace.resets = 0;
        e.check_done();
        Ok(e)
    }

    fn reset(&mut self) {
        self.remaining = self.original.graph_state.clone();
        self.local_done.clear();
        self.pending = self.original.graph_state.vertices().clone();
        self.holders = self.original.assignment.iter().map(|(v, ns)| (v, ns.to_vec())).collect();
        self.saved.clear();
        self.root = None;
        self.delivered.clear();
        self.plan = None;
        self.trace.resets += 1;
        self.prune_local();
    }

    /// Qubits charged outside a plan covering `planned` vertices: deliveries
    /// for MGST, finished vertices for P2P. Space-time plans only charge
    /// the memory arcs they use.
    fn held_outside(&self, planned: usize) -> u64 {
        match self.planner {
            Planner::Mgst => self.delivered.len() as u64,
            Planner::P2p { .. } => (self.original.graph_state.n_vertices() - planned) as u64,
            Planner::StP2p { .. } => 0,
        }
    }

    fn is_mgst(&self) -> bool {
        self.planner == Planner::Mgst
    }

    /// Edges whose ends share a holder are finished by a local gate.
    fn prune_local(&mut self) {
        let edges: Vec<_> = self.remaining.edges().iter().copied().collect();
        for (a, b) in edges {
            if self.holders[&a].iter().any(|n| self.holders[&b].contains(n)) {
                self.remaining.remove_edge(a, b);
                self.local_done.insert((a, b));
            }
        }
    }

    pub fn done(&self) -> bool {
        if self.is_mgst() {
            self.pending.is_empty()
        } else {
            self.remaining.edges().is_empty()
        }
    }

    fn check_done(&mut self) {
        if self.done() {
            self.trace.status = Status::Success;
        }
    }

    pub fn status(&self) -> Status {
        self.trace.status
    }

    /// The task left to distribute on top of `residual`.
    pub fn current_task(&self, residual: &Network, ids: &[ChannelId]) -> Result<(DistributionTask, Vec<Option<ChannelId>>)> {
        let mut chans: Vec<Channel> = residual.channels().to_vec();
        let mut base_of: Vec<Option<ChannelId>> = ids.iter().map(|&i| Some(i)).collect();
        let mut memory: Vec<Memory> = residual.memories().to_vec();
        let mut take = |n: NodeId, q: u32| {
            if let Memory::Limited(m) = memory[n] {
                memory[n] = Memory::Limited(m.saturating_sub(q));
            }
        };
        let mut pairs: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
        for &(a, b) in &self.saved {
            *pairs.entry((a.min(b), a.max(b))).or_default() += 1;
            take(a, 1);
            take(b, 1);
        }
        for ((a, b), w) in pairs {
            chans.push(Channel { endpoints: [a, b], width: w, prob: 1.0, one_shot: true });
            base_of.push(None);
        }
        for &v in &self.delivered {
            take(self.original.alpha(v), 1);
        }
        let net = Network::new(residual.n_nodes(), chans, memory, residual.cz_prob())?;
        let task = if self.is_mgst() {
            let gs = GraphState::new(self.pending.iter().copied(), [])?;
            let asg = Assignment::from_primary(self.pending.iter().map(|&v| (v, self.original.alpha(v))));
            DistributionTask::new(net, gs, asg)?
        } else {
            let edges = self.remaining.edges().iter().chain(&self.local_done).copied();
            let gs = GraphState::new(self.original.graph_state.vertices().iter().copied(), edges)?;
            let mut asg = Assignment::new();
            for (&v, ns) in &self.holders {
                asg.set(v, ns.clone());
            }
            DistributionTask::new(net, gs, asg)?.preprocessed()
        };
        Ok((task, base_of))
    }

    fn call_planner(&self, task: &DistributionTask) -> Result<(Solution, Option<NodeId>)> {
        Ok(match self.planner {
            Planner::Mgst => {
                let p = mgst_plan_all(task, self.root)?;
                (p.solution, Some(p.root))
            }
            Planner::P2p { mem } => (p2pgsd_plan(task, mem)?.solution, None),
            Planner::StP2p { params } => (stp2pgsd_plan(task, params)?.solution, None),
        })
    }

    /// Wall-clock time spent in the planner so far.
    pub fn plan_time(&self) -> Duration {
        self.plan_time
    }

    fn make_plan(&mut self, residual: &Network, ids: &[ChannelId]) -> Result<Option<ActivePlan>> {
        let (task, base_of) = self.current_task(residual, ids)?;
        let started = Instant::now();
        let planned = self.call_planner(&task);
        self.plan_time += started.elapsed();
        let (sol, root) = planned?;
        let n = sol.paths.len();
        let realized = sol.paths.iter().map(|p| vec![false; p.hops.len()]).collect();
        Ok(Some(ActivePlan {
            sol,
            net: task.network,
            base_of,
            next: 1,
            root,
            held_before: self.held_outside(task.graph_state.n_vertices()),
            residual: residual.clone(),
            failed: vec![false; n],
            realized,
        }))
    }

    /// Plan if needed; falls back to the original task when the current one
    /// cannot be planned. `Ok(false)` leaves the shot idle.
    fn ensure_plan(&mut self, residual: &Network, ids: &[ChannelId], full: bool) -> Result<bool> {
        if let Some(p) = &self.plan {
            if &p.residual == residual && p.next <= p.sol.n_shots() {
                return Ok(false);
            }
        }
        self.plan = None;
        let plan = match self.make_plan(residual, ids) {
            Ok(p) => p,
            Err(e) if matches!(e, Error::InvalidArgument(_) | Error::Io(_) | Error::Json(_)) => return Err(e),
            Err(_) => {
                self.reset();
                match self.make_plan(residual, ids) {
                    Ok(p) => p,
                    Err(e) if full => return Err(e),
                    Err(_) => return Ok(true),
                }
            }
        };
        self.plan = plan;
        if let Some(p) = &self.plan {
            if self.is_mgst() {
                self.root = p.root;
                // Vertices already at the root need no delivery.
                let at_root: Vec<VertexId> =
                    self.pending.iter().copied().filter(|&v| Some(self.original.alpha(v)) == p.root).collect();
                for v in at_root {
                    self.pending.remove(&v);
                    self.delivered.insert(v);
                }
            }
        }
        Ok(true)
    }

    /// Execute one shot on `residual` (`ids` maps its channels to base
    /// channels; `full` says whether it is the whole base network). Returns
    /// the attempts per base channel.
    pub fn step(&mut self, residual: &Network, ids: &[ChannelId], full: bool, n_base: usize) -> Result<Vec<u32>> {
        let mut used = vec![0u32; n_base];
        if self.trace.status != Status::InProgress {
            return Ok(used);
        }
        let replanned = self.ensure_plan(residual, ids, full)?;
        let shot_no = self.trace.shots.len() + 1;
        if self.done() {
            self.trace.status = Status::Success;
            self.plan = None;
            return Ok(used);
        }
        let Some(mut plan) = self.plan.take() else {
            // Nothing could be planned on this residual network.
            self.push_record(ShotRecord {
                shot: shot_no,
                replanned,
                planned_paths: 0,
                links: Vec::new(),
                recovered: 0,
                completed: Vec::new(),
                saved: Vec::new(),
                cz_failed: false,
                bell_pairs: 0,
                memory: self.held_outside(0),
            });
            return Ok(used);
        };
        let s = plan.next;
        let net = plan.net.clone();
        let n_chan = net.channels().len();

        // Segments in priority order, with per-channel ranks.
        let mut segs: Vec<Segment> = Vec::new();
        let mut demand = vec![0u32; n_chan];
        for (pi, path) in plan.sol.paths.iter().enumerate() {
            if plan.failed[pi] {
                continue;
            }
            let mut run: Vec<usize> = Vec::new();
            let flush = |run: &mut Vec<usize>, segs: &mut Vec<Segment>, demand: &mut Vec<u32>| -> Result<()> {
                if run.is_empty() {
                    return Ok(());
                }
                let mut main = chain(&path.hops.iter().map(|h| h.arc).collect::<Vec<_>>(), run)?;
                for (i, &c) in main.channels.iter().enumerate() {
                    demand[c] += 1;
                    main.rank[i] = demand[c];
                }
                segs.push(Segment { path: pi, hops: std::mem::take(run), main });
                Ok(())
            };
            for (hi, h) in path.hops.iter().enumerate() {
                match h.arc {
                    Arc::Bell { shot, .. } if shot == s => run.push(hi),
                    _ => flush(&mut run, &mut segs, &mut demand)?,
                }
            }
            flush(&mut run, &mut segs, &mut demand)?;
        }

        // Recovery reservations.
        let mut free: Vec<u32> = net
            .channels()
            .iter()
            .enumerate()
            .map(|(c, ch)| if ch.one_shot && s > 1 { 0 } else { ch.width.saturating_sub(demand[c]) })
            .collect();
        let plans: Vec<RecoveryPlan> = segs
            .iter()
            .map(|sg| {
                if self.cfg.eum {
                    find_recovery_paths(&sg.main, &net, &mut free, self.cfg.h_max)
                } else {
                    RecoveryPlan::bare(sg.main.clone())
                }
            })
            .collect();
        let mut attempts = demand.clone();
        let mut rec_rank: Vec<Vec<Vec<u32>>> = Vec::with_capacity(plans.len());
        for rp in &plans {
            let mut per = Vec::new();
            for p in &rp.paths {
                per.push(
                    p.channels
                        .iter()
                        .map(|&c| {
                            attempts[c] += 1;
                            attempts[c]
                        })
                        .collect(),
                );
            }
            rec_rank.push(per);
        }

        // Bell attempts.
        let mut succ = vec![0u32; n_chan];
        let mut links = Vec::new();
        for c in 0..n_chan {
            if attempts[c] == 0 {
                continue;
            }
            let p = net.channel(c).prob;
            succ[c] = (0..attempts[c]).filter(|_| self.rng.random_bool(p)).count() as u32;
            if let Some(b) = plan.base_of[c] {
                used[b] += attempts[c];
            }
            links.push((plan.base_of[c], attempts[c], succ[c]));
        }

        // Outcome per segment.
        let memory_free = self.free_memory(&net);
        let mut mem_left = memory_free.clone();
        let mut recovered = 0;
        let mut saved_now = Vec::new();
        let mut rec_bell = 0u64;
        let mut seg_ok = vec![true; segs.len()];
        let dist_cache = self.cfg.h_max > 0;
        for (si, sg) in segs.iter().enumerate() {
            let main_ok: Vec<bool> = (0..sg.main.hops()).map(|i| sg.main.rank[i] <= succ[sg.main.channels[i]]).collect();
            for (k, &hi) in sg.hops.iter().enumerate() {
                plan.realized[sg.path][hi] = main_ok[k];
            }
            if main_ok.iter().all(|&b| b) {
                continue;
            }
            let rp = &plans[si];
            let rec_ok: Vec<Vec<bool>> = rp
                .paths
                .iter()
                .enumerate()
                .map(|(r, p)| (0..p.channels.len()).map(|j| rec_rank[si][r][j] <= succ[p.channels[j]]).collect())
                .collect();
            let states: BTreeMap<NodeId, LinkState> = sg
                .main
                .nodes
                .iter()
                .map(|&x| (x, if dist_cache { link_state(&net, x, 2 * self.cfg.h_max, &attempts, &succ) } else { LinkState::default() }))
                .collect();
            let mut ok = false;
            if self.cfg.eum {
                let mut dec: BTreeMap<NodeId, Option<Switch>> = BTreeMap::new();
                for &x in &sg.main.nodes {
                    dec.insert(x, eum_switch(rp, &states[&x], &net, x)?);
                }
                if let Some(used_links) = follow(rp, &dec, &main_ok, &rec_ok) {
                    ok = true;
                    recovered += 1;
                    rec_bell += used_links.iter().filter(|l| matches!(l, LinkRef::Rec(..))).count() as u64;
                }
            }
            if !ok {
                seg_ok[si] = false;
                if self.cfg.st_eum {
                    let has_mem: BTreeSet<NodeId> = sg.main.nodes.iter().copied().filter(|&x| mem_left[x] > 0).collect();
                    let mut save = BTreeMap::new();
                    for &x in &sg.main.nodes {
                        let (_, sv) = st_eum_decide(rp, &states[&x], &net, x, &has_mem, self.cfg.st_eum_params)?;
                        save.insert(x, sv);
                    }
                    for (a, b) in successful_runs(&sg.main, &main_ok) {
                        let (na, nb) = (sg.main.nodes[a], sg.main.nodes[b]);
                        let ends_ok = (a == 0 || save[&na]) && (b == sg.main.hops() || save[&nb]);
                        if ends_ok && mem_left[na] > 0 && mem_left[nb] > 0 {
                            mem_left[na] -= 1;
                            mem_left[nb] -= 1;
                            saved_now.push((na, nb));
                        }
                    }
                }
            }
        }
        for (si, sg) in segs.iter().enumerate() {
            if !seg_ok[si] {
                plan.failed[sg.path] = true;
            }
        }

        // Completed paths and fusions.
        let mut completed = Vec::new();
        let mut reached: BTreeSet<(VertexId, NodeId)> = BTreeSet::new();
        let mut cz_failed = false;
        for (pi, path) in plan.sol.paths.iter().enumerate() {
            if plan.failed[pi] {
                continue;
            }
            let last = path.hops.iter().filter(|&h| matches!(h.arc, Arc::Bell { .. })).map(|h| h.arc.shot()).max().unwrap_or(path.shot);
            if last != s {
                continue;
            }
            let ps = net.cz_prob();
            if ps < 1.0 {
                for _ in 0..path.cz_count() {
                    if !self.rng.random_bool(ps) {
                        cz_failed = true;
                    }
                }
            }
            completed.push(path.label);
            for h in &path.hops {
                if let Arc::Bell { from, to, .. } = h.arc {
                    reached.insert((h.vertex, from));
                    reached.insert((h.vertex, to));
                }
            }
        }

        // Accounting.
        let mut bell = rec_bell;
        for c in 0..n_chan {
            bell += succ[c].min(plan.sol.bell[s - 1].load(c) as u32) as u64;
        }
        let memory = plan.sol.memory[s - 1].total() + plan.held_before + 2 * saved_now.len() as u64;
        let deviation = cz_failed || seg_ok.iter().any(|&b| !b);

        // Fold the outcome into the task.
        self.saved.clear();
        if cz_failed {
            self.reset();
        } else {
            for l in &completed {
                match *l {
                    PathLabel::Edge { v1, v2 } => {
                        self.remaining.remove_edge(v1, v2);
                    }
                    PathLabel::Deliver { vertex } => {
                        if self.pending.remove(&vertex) {
                            self.delivered.insert(vertex);
                        }
                    }
                }
            }
            if !self.is_mgst() {
                self.update_holders(&plan, s, &reached);
                if deviation {
                    if let Planner::StP2p { .. } = self.planner {
                        for vv in self.virtual_vertices(&plan, s) {
                            if let Some((a, b)) = path_ends(&vv, &plan, s) {
                                if mem_left[a] > 0 && mem_left[b] > 0 {
                                    mem_left[a] -= 1;
                                    mem_left[b] -= 1;
                                    saved_now.push((a, b));
                                }
                            }
                        }
                    }
                }
            }
            self.saved = saved_now.clone();
            plan.next += 1;
            if !deviation && saved_now.is_empty() && plan.next <= plan.sol.n_shots() {
                // A plan still running finishes its own edges.
                self.plan = Some(plan);
            } else if !self.is_mgst() {
                self.prune_local();
            }
        }
        self.push_record(ShotRecord {
            shot: shot_no,
            replanned,
            planned_paths: segs.len(),
            links,
            recovered,
            completed,
            saved: saved_now,
            cz_failed,
            bell_pairs: bell,
            memory,
        });
        Ok(used)
    }

    fn push_record(&mut self, r: ShotRecord) {
        self.trace.metrics = self.trace.metrics + Metrics { shots: 1, bell_pairs: r.bell_pairs, cum_memory: r.memory };
        self.trace.shots.push(r);
        self.check_done();
        if self.trace.status == Status::InProgress && self.trace.shots.len() >= self.cfg.shot_cap {
            self.trace.status = Status::Discarded;
        }
    }

    /// Long-term memory left per node after holders, held deliveries and
    /// saved pairs.
    fn free_memory(&self, net: &Network) -> Vec<u64> {
        (0..net.n_nodes())
            .map(|n| match net.memory(n) {
                Memory::Unlimited => u64::MAX,
                Memory::Limited(m) => {
                    let load = self.holders.values().filter(|ns| ns.contains(&n)).count() as u64;
                    (m as u64).saturating_sub(load)
                }
            })
            .collect()
    }

    fn update_holders(&mut self, plan: &ActivePlan, s: usize, reached: &BTreeSet<(VertexId, NodeId)>) {
        let mem = &plan.sol.memory[s - 1];
        let mut next = BTreeMap::new();
        for (v, ns) in self.original.assignment.iter() {
            let mut set: Vec<NodeId> = ns.to_vec();
            for m in 0..plan.net.n_nodes() {
                if set.contains(&m) || mem.get(m, v) == 0 {
                    continue;
                }
                let had = self.holders.get(&v).is_some_and(|h| h.contains(&m));
                if had || reached.contains(&(v, m)) {
                    set.push(m);
                }
            }
            next.insert(v, set);
        }
        self.holders = next;
    }

    /// Realised pieces of unfinished space-time paths that are not attached
    /// to a holder of their vertex.
    fn virtual_vertices(&self, plan: &ActivePlan, s: usize) -> Vec<VirtualVertex> {
        let mut adj: BTreeMap<VertexId, BTreeMap<NodeId, BTreeSet<NodeId>>> = BTreeMap::new();
        for (pi, path) in plan.sol.paths.iter().enumerate() {
            let last = path.hops.iter().map(|h| h.arc.shot()).max().unwrap_or(0);
            if !plan.failed[pi] && last <= s {
                continue;
            }
            for (hi, h) in path.hops.iter().enumerate() {
                if let Arc::Bell { from, to, shot, .. } = h.arc {
                    if shot <= s && plan.realized[pi][hi] {
                        let g = adj.entry(h.vertex).or_default();
                        g.entry(from).or_default().insert(to);
                        g.entry(to).or_default().insert(from);
                    }
                }
            }
        }
        let mem = &plan.sol.memory[s - 1];
        let mut out = Vec::new();
        for (v, g) in adj {
            let holders: BTreeSet<NodeId> = self.holders.get(&v).map(|h| h.iter().copied().collect()).unwrap_or_default();
            let mut seen = BTreeSet::new();
            for &start in g.keys() {
                if seen.contains(&start) {
                    continue;
                }
                let mut comp = BTreeSet::from([start]);
                let mut q = VecDeque::from([start]);
                while let Some(u) = q.pop_front() {
                    for &w in &g[&u] {
                        if comp.insert(w) {
                            q.push_back(w);
                        }
                    }
                }
                seen.extend(comp.iter().copied());
                if comp.iter().any(|n| holders.contains(n)) {
                    continue;
                }
                let forwarding = comp.iter().copied().filter(|&n| mem.get(n, v) != 0).collect();
                out.push(VirtualVertex { source: v, nodes: comp, carried: Vec::new(), forwarding });
            }
        }
        out
    }
}

/// Node chain of consecutive Bell hops.
fn chain(arcs: &[Arc], run: &[usize]) -> Result<MainPath> {
    let ends: Vec<(NodeId, NodeId, ChannelId)> = run
        .iter()
        .map(|&i| match arcs[i] {
            Arc::Bell { from, to, channel, .. } => (from, to, channel),
            _ => unreachable!("runs hold Bell hops only"),
        })
        .collect();
    let mut cur = ends[0].0;
    if ends.len() > 1 {
        let (a, b, _) = ends[1];
        if ends[0].0 == a || ends[0].0 == b {
            cur = ends[0].1;
        }
    }
    let mut nodes = vec![cur];
    let mut channels = Vec::new();
    for &(a, b, c) in &ends {
        cur = if cur == a {
            b
        } else if cur == b {
            a
        } else {
            return violated("path hops do not chain");
        };
        nodes.push(cur);
        channels.push(c);
    }
    MainPath::new(nodes, channels)
}

/// What `x` sees: attempted channels with an end within `radius` hops.
fn link_state(net: &Network, x: NodeId, radius: usize, attempts: &[u32], succ: &[u32]) -> LinkState {
    let mut dist = vec![usize::MAX; net.n_nodes()];
    dist[x] = 0;
    let mut q = VecDeque::from([x]);
    while let Some(u) = q.pop_front() {
        for &(w, _) in net.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                q.push_back(w);
            }
        }
    }
    let mut known = BTreeMap::new();
    for (c, ch) in net.channels().iter().enumerate() {
        if attempts[c] > 0 && dist[ch.endpoints[0]].min(dist[ch.endpoints[1]]) < radius {
            known.insert(c, succ[c]);
        }
    }
    LinkState { known }
}

/// Follow the switches from the first node; the links used if the chain
/// reaches the last node.
fn follow(
    rp: &RecoveryPlan,
    dec: &BTreeMap<NodeId, Option<Switch>>,
    main_ok: &[bool],
    rec_ok: &[Vec<bool>],
) -> Option<Vec<LinkRef>> {
    let m = &rp.main;
    let last = *m.nodes.last().unwrap();
    let ends = |l: LinkRef| match l {
        LinkRef::Main(i) => (m.nodes[i], m.nodes[i + 1]),
        LinkRef::Rec(r, j) => (rp.paths[r].nodes[j], rp.paths[r].nodes[j + 1]),
    };
    let ok = |l: LinkRef| match l {
        LinkRef::Main(i) => main_ok[i],
        LinkRef::Rec(r, j) => rec_ok[r][j],
    };
    let mut cur = m.nodes[0];
    let mut link = (*dec.get(&cur)?)?.toward_end?;
    let mut used = Vec::new();
    let limit = m.hops() + rp.paths.iter().map(|p| p.channels.len()).sum::<usize>() + 1;
    for _ in 0..limit {
        if !ok(link) {
            return None;
        }
        used.push(link);
        let (a, b) = ends(link);
        let y = if cur == a { b } else { a };
        if y == last {
            return ((*dec.get(&y)?)?.toward_start == Some(link)).then_some(used);
        }
        let next = if m.position(y).is_some() {
            let sw = (*dec.get(&y)?)?;
            if sw.toward_start == Some(link) {
                sw.toward_end?
            } else if sw.toward_end == Some(link) {
                sw.toward_start?
            } else {
                return None;
            }
        } else {
            let LinkRef::Rec(r, j) = link else { return None };
            if cur == rp.paths[r].nodes[j] {
                LinkRef::Rec(r, j + 1)
            } else {
                LinkRef::Rec(r, j.checked_sub(1)?)
            }
        };
        cur = y;
        link = next;
    }
    None
}

/// Maximal runs of realised main hops as (first node index, last node
/// index), excluding the whole path.
fn successful_runs(main: &MainPath, ok: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < ok.len() {
        if !ok[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < ok.len() && ok[i] {
            i += 1;
        }
        if !(start == 0 && i == main.hops()) {
            out.push((start, i));
        }
    }
    out
}

/// End nodes of a chain-shaped component.
fn path_ends(vv: &VirtualVertex, plan: &ActivePlan, s: usize) -> Option<(NodeId, NodeId)> {
    let mut deg: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut edges = BTreeSet::new();
    for (pi, path) in plan.sol.paths.iter().enumerate() {
        for (hi, h) in path.hops.iter().enumerate() {
            if let Arc::Bell { from, to, shot, .. } = h.arc {
                if h.vertex == vv.source && shot <= s && plan.realized[pi][hi] && vv.nodes.contains(&from) {
                    edges.insert((from.min(to), from.max(to)));
                }
            }
        }
    }
    for &(a, b) in &edges {
        *deg.entry(a).or_default() += 1;
        *deg.entry(b).or_default() += 1;
    }
    let leaves: Vec<NodeId> = deg.iter().filter(|&(_, &d)| d == 1).map(|(&n, _)| n).collect();
    let chain_like = deg.values().all(|&d| d <= 2) && edges.len() + 1 == deg.len();
    (chain_like && leaves.len() == 2).then(|| (leaves[0], leaves[1]))
}

/// Run one task until success or the shot cap.
pub fn run_adaptive(task: &DistributionTask, planner: Planner, cfg: ProtocolConfig, seed: u64) -> Result<ExecutionTrace> {
    run_adaptive_timed(task, planner, cfg, seed).map(|(t, _)| t)
}

/// [`run_adaptive`] plus the time spent planning.
pub fn run_adaptive_timed(
    task: &DistributionTask,
    planner: Planner,
    cfg: ProtocolConfig,
    seed: u64,
) -> Result<(ExecutionTrace, Duration)> {
    let mut e = Engine::new(task, planner, cfg, seed)?;
    let base = e.original.network.clone();
    let ids: Vec<ChannelId> = (0..base.channels().len()).collect();
    while e.status() == Status::InProgress {
        e.step(&base, &ids, true, ids.len())?;
    }
    let t = e.plan_time;
    Ok((e.trace, t))
}

/// Run tasks sharing one network. Each shot, tasks plan in priority order
/// on the channel width left by the tasks before them. Task `i` draws from
/// its own stream seeded by `derive_seed(seed, [i])` (task 0 uses `seed`).
pub fn run_multitask(tasks: &[DistributionTask], planner: Planner, cfg: ProtocolConfig, seed: u64) -> Result<Vec<ExecutionTrace>> {
    let Some(first) = tasks.first() else { return Ok(Vec::new()) };
    let base = first.network.clone();
    if tasks.iter().any(|t| t.network != base) {
        return crate::error::invalid("all tasks must share one network");
    }
    let mut engines = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Engine::new(t, planner, cfg, task_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let n = base.channels().len();
    while engines.iter().any(|e| e.status() == Status::InProgress) {
        let mut used = vec![0u32; n];
        for e in engines.iter_mut() {
            if e.status() != Status::InProgress {
                continue;
            }
            let (res, ids) = residual_network(&base, &used)?;
            let full = used.iter().all(|&u| u == 0);
            let u = e.step(&res, &ids, full, n)?;
            for (a, b) in used.iter_mut().zip(u) {
                *a += b;
            }
        }
    }
    Ok(engines.into_iter().map(|e| e.trace).collect())
}

/// Seed of task `i` in a multitask run.
pub fn task_seed(seed: u64, i: usize) -> u64 {
    if i == 0 {
        seed
    } else {
        derive_seed(seed, &[i as u64])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::compute_metrics;

    fn pair(p: f64) -> DistributionTask {
        let net = Network::simple(2, vec![Channel::new(0, 1, 1, p)]).unwrap();
        DistributionTask::new(net, GraphState::on(2, &[(0, 1)]).unwrap(), Assignment::from_slice(&[0, 1])).unwrap()
    }

    #[test]
    fn deterministic_matches_plan() {
        let t = crate::fixtures::example_one(1.0);
        for planner in [
            Planner::Mgst,
            Planner::P2p { mem: MemoryStrategyKind::Minimum },
            Planner::P2p { mem: MemoryStrategyKind::Standard },
            Planner::StP2p { params: StParams::default() },
        ] {
            let ideal = compute_metrics(&planner.plan(&t).unwrap(), &t.network).unwrap();
            let tr = run_adaptive(&t, planner, ProtocolConfig::default(), 1).unwrap();
            assert_eq!(tr.status, Status::Success);
            assert_eq!(tr.metrics, ideal, "{planner:?}");
        }
    }

    #[test]
    fn geometric_single_link() {
        let t = pair(0.5);
        let n = 400;
        let total: u64 = (0..n).map(|s| run_adaptive(&t, Planner::P2p { mem: MemoryStrategyKind::Standard }, ProtocolConfig::no_recovery(), s).unwrap().metrics.shots).sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 2.0).abs() < 0.3, "{mean}");
    }

    #[test]
    fn shot_cap_discards() {
        let t = pair(1e-9);
        let cfg = ProtocolConfig { shot_cap: 5, ..Default::default() };
        let tr = run_adaptive(&t, Planner::Mgst, cfg, 3).unwrap();
        assert_eq!(tr.status, Status::Discarded);
        assert_eq!(tr.shots.len(), 5);
    }

    #[test]
    fn cz_failure_resets() {
        let net = Network::simple(3, vec![Channel::new(0, 1, 1, 1.0), Channel::new(1, 2, 1, 1.0)]).unwrap().with_cz_prob(0.5).unwrap();
        let t = DistributionTask::new(net, GraphState::on(2, &[(0, 1)]).unwrap(), Assignment::from_slice(&[0, 2])).unwrap();
        let mut saw = false;
        for seed in 0..20 {
            let tr = run_adaptive(&t, Planner::P2p { mem: MemoryStrategyKind::Standard }, ProtocolConfig::default(), seed).unwrap();
            if tr.shots.iter().any(|r| r.cz_failed) {
                saw = true;
                assert!(tr.resets >= 1);
            }
        }
        assert!(saw);
    }

    #[test]
    fn seeds_mix() {
        assert_ne!(derive_seed(1, &[0, 0]), derive_seed(1, &[0, 1]));
        assert_eq!(derive_seed(7, &[3]), derive_seed(7, &[3]));
    }
}

#[cfg(test)]
mod st_eum_tests {
    use super::*;

    fn line(p: f64) -> DistributionTask {
        let net = Network::simple(3, vec![Channel::new(0, 1, 1, p), Channel::new(1, 2, 1, p)]).unwrap();
        DistributionTask::new(net, GraphState::on(2, &[(0, 1)]).unwrap(), Assignment::from_slice(&[0, 2])).unwrap()
    }

    fn mean_shots(cfg: ProtocolConfig, n: u64) -> f64 {
        let t = line(0.3);
        let pl = Planner::P2p { mem: MemoryStrategyKind::Standard };
        (0..n).map(|s| run_adaptive(&t, pl, cfg, s).unwrap().metrics.shots as f64).sum::<f64>() / n as f64
    }

    #[test]
    fn saving_beats_retry() {
        let base = mean_shots(ProtocolConfig::no_recovery(), 2000);
        let st = mean_shots(ProtocolConfig { st_eum: true, ..ProtocolConfig::no_recovery() }, 2000);
        assert!(st < base);
    }

    #[test]
    fn random_smoke() {
        use crate::graphs::*;
        for seed in 0..30u64 {
            let params = TopologyParams { n_nodes: 12, seed, ..Default::default() };
            let net = gen_waxman_network(&params).unwrap();
            let gs = gen_graph_state(&GraphStateSpec { kind: GraphKind::PruferTree, n_vertices: 6, seed }).unwrap();
            let asg = gen_assignment(&gs, &net, seed, false).unwrap();
            let t = DistributionTask::new(net, gs, asg).unwrap();
            for pl in [
                Planner::Mgst,
                Planner::P2p { mem: MemoryStrategyKind::Maximum },
                Planner::StP2p { params: StParams::factor(1.0) },
            ] {
                for cfg in [ProtocolConfig::default(), ProtocolConfig { st_eum: true, ..Default::default() }] {
                    let tr = run_adaptive(&t, pl, cfg, seed).unwrap();
                    assert_eq!(tr.status, Status::Success, "{seed} {pl:?}");
                }
            }
        }
    }
}
