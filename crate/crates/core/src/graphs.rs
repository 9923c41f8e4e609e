//! Seeded generators for topologies, graph states, assignments and memory.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Assignment, Channel, DistributionTask, GraphState, Memory, Network, NodeId};

pub const CONNECT_RETRIES: usize = 100_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyParams {
    pub n_nodes: usize,
    pub waxman_beta: f64,
    pub waxman_decay: f64,
    /// Channel success probability is exp(−attenuation · d_norm).
    pub attenuation: f64,
    pub avg_channel_width: f64,
    /// `None` leaves every node with unlimited memory.
    pub avg_memory: Option<f64>,
    pub cz_prob: f64,
    pub seed: u64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        TopologyParams {
            n_nodes: 50,
            waxman_beta: 0.6,
            waxman_decay: 5.0,
            attenuation: 0.5,
            avg_channel_width: 2.0,
            avg_memory: None,
            cz_prob: 1.0,
            seed: 0,
        }
    }
}

impl TopologyParams {
    pub fn check(&self) -> Result<()> {
        if self.n_nodes < 2 {
            return invalid("n_nodes must be at least 2");
        }
        if !(self.waxman_beta > 0.0 && self.waxman_beta <= 1.0) {
            return invalid("waxman_beta must lie in (0,1]");
        }
        if self.waxman_decay <= 0.0 {
            return invalid("waxman_decay must be positive");
        }
        if self.attenuation < 0.0 {
            return invalid("attenuation must be non-negative");
        }
        if self.avg_channel_width < 1.0 {
            return invalid("avg_channel_width must be at least 1");
        }
        if matches!(self.avg_memory, Some(m) if m < 1.0) {
            return invalid("avg_memory must be at least 1");
        }
        Ok(())
    }
}

/// Waxman link probability for a normalised distance.
pub fn waxman_prob(beta: f64, decay: f64, d_norm: f64) -> f64 {
    beta * (-decay * d_norm).exp()
}

/// 1 + Poisson(mean − 1).
pub fn shifted_poisson<R: Rng>(rng: &mut R, mean: f64) -> u32 {
    let lambda = mean - 1.0;
    if lambda <= 0.0 {
        return 1;
    }
    let p = Poisson::new(lambda).expect("positive rate");
    1 + p.sample(rng) as u32
}

pub fn gen_waxman_network(params: &TopologyParams) -> Result<Network> {
    params.check()?;
    let mut rng = rng(params.seed);
    let n = params.n_nodes;
    for _ in 0..CONNECT_RETRIES {
        let pos: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let dist = |a: usize, b: usize| ((pos[a].0 - pos[b].0).powi(2) + (pos[a].1 - pos[b].1).powi(2)).sqrt();
        let mut dmax = 0.0f64;
        for a in 0..n {
            for b in a + 1..n {
                dmax = dmax.max(dist(a, b));
            }
        }
        if dmax == 0.0 {
            continue;
        }
        let mut chans = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                let d = dist(a, b) / dmax;
                if rng.random::<f64>() < waxman_prob(params.waxman_beta, params.waxman_decay, d) {
                    let prob = (-params.attenuation * d).exp();
                    let width = shifted_poisson(&mut rng, params.avg_channel_width);
                    chans.push(Channel::new(a, b, width, prob));
                }
            }
        }
        let memory = match params.avg_memory {
            None => vec![Memory::Unlimited; n],
            Some(m) => (0..n).map(|_| Memory::Limited(shifted_poisson(&mut rng, m))).collect(),
        };
        let net = Network::new(n, chans, memory, params.cz_prob)?;
        if net.is_connected() {
            return Ok(net);
        }
    }
    Err(Error::Generation(format!("no connected Waxman graph on {n} nodes after {CONNECT_RETRIES} tries")))
}

/// A chain of cliques of `cell_size` nodes. Consecutive cells are joined by
/// one channel from the last node of a cell to the first node of the next.
/// Every channel has width `cell_width` and probability `channel_prob`.
pub fn gen_cell_topology(n_cells: usize, cell_size: usize, cell_width: u32, channel_prob: f64) -> Result<Network> {
    if n_cells == 0 || cell_size == 0 {
        return invalid("need at least one cell of at least one node");
    }
    let mut chans = Vec::new();
    for c in 0..n_cells {
        let base = c * cell_size;
        for a in 0..cell_size {
            for b in a + 1..cell_size {
                chans.push(Channel::new(base + a, base + b, cell_width, channel_prob));
            }
        }
        if c + 1 < n_cells {
            chans.push(Channel::new(base + cell_size - 1, base + cell_size, cell_width, channel_prob));
        }
    }
    Network::simple(n_cells * cell_size, chans)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    ErdosRenyi { p: f64 },
    Star,
    PruferTree,
    Grid { rows: usize, cols: usize },
    BellPairs,
    Complete,
}

impl GraphKind {
    pub fn name(&self) -> &'static str {
        match self {
            GraphKind::ErdosRenyi { .. } => "erdos_renyi",
            GraphKind::Star => "star",
            GraphKind::PruferTree => "tree",
            GraphKind::Grid { .. } => "grid",
            GraphKind::BellPairs => "bell_pairs",
            GraphKind::Complete => "complete",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStateSpec {
    pub kind: GraphKind,
    pub n_vertices: usize,
    pub seed: u64,
}

/// Decode a Prüfer sequence over `0..seq.len()+2` into tree edges.
pub fn prufer_decode(seq: &[usize]) -> Vec<(usize, usize)> {
    let n = seq.len() + 2;
    let mut degree = vec![1usize; n];
    for &x in seq {
        degree[x] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut leaves: std::collections::BTreeSet<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    for &x in seq {
        let leaf = *leaves.iter().next().expect("a leaf exists");
        leaves.remove(&leaf);
        edges.push((leaf, x));
        degree[x] -= 1;
        if degree[x] == 1 {
            leaves.insert(x);
        }
    }
    let rest: Vec<usize> = leaves.into_iter().collect();
    edges.push((rest[0], rest[1]));
    edges
}

pub fn gen_graph_state(spec: &GraphStateSpec) -> Result<GraphState> {
    let n = spec.n_vertices;
    let mut rng = rng(spec.seed);
    let edges: Vec<(usize, usize)> = match spec.kind {
        GraphKind::Star => (1..n).map(|v| (0, v)).collect(),
        GraphKind::Complete => (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect(),
        GraphKind::BellPairs => {
            if n % 2 == 1 {
                return invalid("a Bell-pair state needs an even vertex count");
            }
            (0..n / 2).map(|i| (2 * i, 2 * i + 1)).collect()
        }
        GraphKind::ErdosRenyi { p } => {
            if !(0.0..=1.0).contains(&p) {
                return invalid("edge probability outside [0,1]");
            }
            let mut e = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.random::<f64>() < p {
                        e.push((a, b));
                    }
                }
            }
            e
        }
        GraphKind::PruferTree => match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => {
                let seq: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
                prufer_decode(&seq)
            }
        },
        GraphKind::Grid { rows, cols } => {
            if rows * cols != n {
                return invalid(format!("grid {rows}x{cols} does not have {n} vertices"));
            }
            let mut e = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let v = r * cols + c;
                    if c + 1 < cols {
                        e.push((v, v + 1));
                    }
                    if r + 1 < rows {
                        e.push((v, v + cols));
                    }
                }
            }
            e
        }
    };
    GraphState::new(0..n, edges)
}

/// Near-square grid shape for `n` vertices: the factor pair closest to √n.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut best = (1, n);
    for r in 1..=n {
        if r * r > n {
            break;
        }
        if n.is_multiple_of(r) {
            best = (r, n / r);
        }
    }
    best
}

pub fn gen_assignment(gs: &GraphState, net: &Network, seed: u64, injective: bool) -> Result<Assignment> {
    let mut rng = rng(seed);
    let verts: Vec<_> = gs.vertices().iter().copied().collect();
    let nodes: Vec<NodeId> = if injective {
        if verts.len() > net.n_nodes() {
            return invalid(format!("{} vertices cannot map injectively into {} nodes", verts.len(), net.n_nodes()));
        }
        let mut all: Vec<NodeId> = (0..net.n_nodes()).collect();
        all.shuffle(&mut rng);
        all.truncate(verts.len());
        all
    } else {
        (0..verts.len()).map(|_| rng.random_range(0..net.n_nodes())).collect()
    };
    Ok(Assignment::from_primary(verts.into_iter().zip(nodes)))
}

/// Random per-node memory with enough room for the assigned vertices.
pub fn gen_limited_memory(task: &DistributionTask, avg: f64, mgst_root_bonus: bool, seed: u64) -> Result<Network> {
    if avg < 1.0 {
        return invalid("average memory must be at least 1");
    }
    let mut rng = rng(seed);
    let net = &task.network;
    let mut mem: Vec<Memory> = (0..net.n_nodes())
        .map(|n| {
            let floor = task.assignment.load(n) as u32;
            Memory::Limited(floor.max(shifted_poisson(&mut rng, avg)))
        })
        .collect();
    if mgst_root_bonus {
        let r = rng.random_range(0..net.n_nodes());
        let bonus = 2 * task.graph_state.n_vertices() as u32;
        if let Memory::Limited(m) = mem[r] {
            mem[r] = Memory::Limited(m.max(bonus));
        }
    }
    net.with_memory(mem)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waxman_formula() {
        assert!((waxman_prob(0.6, 5.0, 0.0) - 0.6).abs() < 1e-15);
        assert!((waxman_prob(0.6, 5.0, 1.0) - 0.6 * (-5.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cells() {
        let one = gen_cell_topology(1, 4, 1, 0.9).unwrap();
        assert_eq!(one.channels().len(), 6);
        let two = gen_cell_topology(2, 4, 1, 0.9).unwrap();
        assert_eq!(two.channels().len(), 13);
        let between = two.channels().iter().filter(|c| (c.endpoints[0] < 4) != (c.endpoints[1] < 4)).count();
        assert_eq!(between, 1);
    }

    #[test]
    fn graph_kinds() {
        let g = |kind, n| gen_graph_state(&GraphStateSpec { kind, n_vertices: n, seed: 3 }).unwrap();
        let star = g(GraphKind::Star, 5);
        assert_eq!(star.edges().len(), 4);
        assert_eq!(star.degree(0), 4);
        assert_eq!(g(GraphKind::Grid { rows: 3, cols: 3 }, 9).edges().len(), 12);
        assert_eq!(g(GraphKind::Complete, 5).edges().len(), 10);
        assert_eq!(g(GraphKind::BellPairs, 6).edges().len(), 3);
        assert!(gen_graph_state(&GraphStateSpec { kind: GraphKind::BellPairs, n_vertices: 5, seed: 0 }).is_err());
        assert!(gen_graph_state(&GraphStateSpec { kind: GraphKind::Grid { rows: 2, cols: 2 }, n_vertices: 5, seed: 0 })
            .is_err());
    }

    #[test]
    fn prufer_degrees() {
        let seq = [3, 3, 0, 4];
        let edges = prufer_decode(&seq);
        assert_eq!(edges.len(), 5);
        for v in 0..6 {
            let deg = edges.iter().filter(|&&(a, b)| a == v || b == v).count();
            assert_eq!(deg, 1 + seq.iter().filter(|&&x| x == v).count());
        }
    }

    #[test]
    fn assignment_modes() {
        let net = gen_cell_topology(1, 6, 1, 1.0).unwrap();
        let gs = GraphState::on(6, &[(0, 1)]).unwrap();
        let a = gen_assignment(&gs, &net, 9, true).unwrap();
        let mut nodes: Vec<_> = (0..6).map(|v| a.primary(v).unwrap()).collect();
        nodes.sort();
        assert_eq!(nodes, (0..6).collect::<Vec<_>>());
        assert_eq!(a, gen_assignment(&gs, &net, 9, true).unwrap());
        let big = GraphState::on(7, &[]).unwrap();
        assert!(gen_assignment(&big, &net, 0, true).is_err());
        assert!(gen_assignment(&big, &net, 0, false).is_ok());
    }

    #[test]
    fn memory_floor_and_bonus() {
        let net = gen_cell_topology(1, 5, 1, 1.0).unwrap();
        let gs = GraphState::on(9, &[]).unwrap();
        let asg = Assignment::from_slice(&[0, 0, 0, 1, 2, 3, 4, 4, 1]);
        let task = DistributionTask::new(net, gs, asg).unwrap();
        let out = gen_limited_memory(&task, 1.0, true, 4).unwrap();
        assert!(out.memory(0).capacity().unwrap() >= 3);
        assert!(out.memories().iter().any(|m| m.capacity() == Some(18)));
        assert!(out.memories().iter().all(|m| m.capacity().unwrap() >= 1));
    }
}
