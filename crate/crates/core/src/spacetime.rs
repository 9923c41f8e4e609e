//! Shot-expanded networks: one copy of the topology per shot, joined by
//! memory links between consecutive copies of each node.

use crate::error::Result;
use crate::model::{Arc, ChannelId, Hop, Memory, Network, NodeId, PlannedPath, Solution, VertexId};

/// Default planning cost of keeping a qubit for one slot.
pub fn default_memory_cost() -> f64 {
    -(0.8f64.ln())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StLinkKind {
    Bell { channel: ChannelId, shot: usize },
    Memory { node: NodeId, slot: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StLink {
    pub kind: StLinkKind,
    /// Space-time node ids. For memory links `ends[0]` is the lower slot.
    pub ends: [usize; 2],
    /// `None` is unbounded.
    pub capacity: Option<u32>,
}

#[derive(Clone, Debug)]
pub struct SpacetimeNetwork {
    pub base: Network,
    pub n_shots: usize,
    pub memory_cost: f64,
    links: Vec<StLink>,
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl SpacetimeNetwork {
    pub fn build(net: &Network, n_shots: usize, memory_cost: f64) -> Result<Self> {
        if n_shots == 0 {
            return crate::error::invalid("a space-time network needs at least one shot");
        }
        let nv = net.n_nodes();
        let id = |n: NodeId, k: usize| (k - 1) * nv + n;
        let mut links = Vec::new();
        for k in 1..=n_shots {
            for (c, ch) in net.channels().iter().enumerate() {
                if ch.one_shot && k > 1 {
                    continue;
                }
                links.push(StLink {
                    kind: StLinkKind::Bell { channel: c, shot: k },
                    ends: [id(ch.endpoints[0], k), id(ch.endpoints[1], k)],
                    capacity: Some(ch.width),
                });
            }
        }
        for k in 1..=n_shots {
            for n in 0..nv {
                let cap = net.memory(n);
                if cap.is_zero() {
                    continue;
                }
                links.push(StLink {
                    kind: StLinkKind::Memory { node: n, slot: k },
                    ends: [id(n, k), id(n, k + 1)],
                    capacity: cap.capacity(),
                });
            }
        }
        let mut adjacency = vec![Vec::new(); nv * (n_shots + 1)];
        for (i, l) in links.iter().enumerate() {
            adjacency[l.ends[0]].push((l.ends[1], i));
            adjacency[l.ends[1]].push((l.ends[0], i));
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(SpacetimeNetwork { base: net.clone(), n_shots, memory_cost, links, adjacency })
    }

    pub fn n_st_nodes(&self) -> usize {
        self.base.n_nodes() * (self.n_shots + 1)
    }

    pub fn st_node(&self, n: NodeId, k: usize) -> usize {
        debug_assert!((1..=self.n_shots + 1).contains(&k));
        (k - 1) * self.base.n_nodes() + n
    }

    /// (node, slot) of a space-time id.
    pub fn locate(&self, id: usize) -> (NodeId, usize) {
        let nv = self.base.n_nodes();
        (id % nv, id / nv + 1)
    }

    pub fn links(&self) -> &[StLink] {
        &self.links
    }

    pub fn neighbors(&self, id: usize) -> &[(usize, usize)] {
        &self.adjacency[id]
    }

    pub fn n_bell_links(&self) -> usize {
        self.links.iter().filter(|l| matches!(l.kind, StLinkKind::Bell { .. })).count()
    }

    pub fn n_memory_links(&self) -> usize {
        self.links.len() - self.n_bell_links()
    }

    /// The model arc for traversing `link` starting at space-time node `from`.
    pub fn arc(&self, link: usize, from: usize) -> Arc {
        let l = &self.links[link];
        let to = if l.ends[0] == from { l.ends[1] } else { l.ends[0] };
        match l.kind {
            StLinkKind::Bell { channel, shot } => {
                Arc::Bell { channel, shot, from: self.locate(from).0, to: self.locate(to).0 }
            }
            StLinkKind::Memory { node, slot } => Arc::Memory { node, slot, up: from == l.ends[0] },
        }
    }

    pub fn memory_of(&self, n: NodeId) -> Memory {
        self.base.memory(n)
    }
}

/// One routed space-time path: `(link, from st-node, vertex)` per hop.
#[derive(Clone, Debug, PartialEq)]
pub struct StPath {
    pub label: crate::model::PathLabel,
    pub hops: Vec<(usize, usize, VertexId)>,
    pub fusions: Vec<usize>,
}

/// Turn routed space-time paths into per-shot strategies.
pub fn project_solution(st: &SpacetimeNetwork, paths: &[StPath]) -> Result<Solution> {
    let mut sol = Solution::empty(st.n_shots);
    for p in paths {
        let hops: Vec<Hop> = p.hops.iter().map(|&(l, from, v)| Hop { arc: st.arc(l, from), vertex: v }).collect();
        let shot = hops
            .iter()
            .find_map(|h| match h.arc {
                Arc::Bell { shot, .. } => Some(shot),
                _ => None,
            })
            .unwrap_or(1);
        let fusions = p.fusions.iter().map(|&f| st.locate(f)).collect();
        sol.push_path(&st.base, PlannedPath { label: p.label, shot, hops, fusions });
    }
    sol.check(&st.base)?;
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compute_metrics, Channel, PathLabel};

    fn tri() -> Network {
        Network::simple(3, vec![Channel::new(0, 1, 1, 1.0), Channel::new(1, 2, 1, 1.0)]).unwrap()
    }

    #[test]
    fn counts() {
        let st = SpacetimeNetwork::build(&tri(), 1, default_memory_cost()).unwrap();
        assert_eq!(st.n_st_nodes(), 6);
        assert_eq!(st.n_bell_links(), 2);
        assert_eq!(st.n_memory_links(), 3);
        let net = tri().with_memory(vec![Memory::Limited(0), Memory::Unlimited, Memory::Limited(2)]).unwrap();
        let st = SpacetimeNetwork::build(&net, 2, 0.0).unwrap();
        assert_eq!(st.n_memory_links(), 4);
        assert!(st.links().iter().all(|l| !matches!(l.kind, StLinkKind::Memory { node: 0, .. })));
    }

    #[test]
    fn locate_roundtrip() {
        let st = SpacetimeNetwork::build(&tri(), 3, 0.1).unwrap();
        for k in 1..=4 {
            for n in 0..3 {
                assert_eq!(st.locate(st.st_node(n, k)), (n, k));
            }
        }
    }

    #[test]
    fn projection_counts_arcs() {
        let st = SpacetimeNetwork::build(&tri(), 2, 0.1).unwrap();
        let bell = st.links().iter().position(|l| l.kind == StLinkKind::Bell { channel: 0, shot: 1 }).unwrap();
        let mem = st.links().iter().position(|l| l.kind == StLinkKind::Memory { node: 1, slot: 1 }).unwrap();
        let path = StPath {
            label: PathLabel::Edge { v1: 0, v2: 1 },
            hops: vec![(bell, st.st_node(0, 1), 0), (mem, st.st_node(1, 1), 1)],
            fusions: vec![st.st_node(1, 1)],
        };
        let sol = project_solution(&st, &[path]).unwrap();
        let m = compute_metrics(&sol, &st.base).unwrap();
        assert_eq!((m.shots, m.bell_pairs, m.cum_memory), (2, 1, 1));
        assert_eq!(sol.memory[0].get(1, 1), 1);
    }
}
