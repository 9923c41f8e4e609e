//! Space-time peer-to-peer planner: the greedy router runs once over a
//! K-shot expanded network, so paths may wait in memory and plan ahead.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{channel_success_prob, DistributionTask, Solution};
use crate::p2pgsd::{greedy_pass, p2pgsd_plan, strip_local_edges, MemoryStrategyKind, RouteView, Router, Routed};
use crate::spacetime::{default_memory_cost, project_solution, SpacetimeNetwork, StLinkKind, StPath};

/// Per-link cost ceiling.
pub const COST_CAP: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum StMetricVariant {
    /// Success probability times p^(j·width).
    #[default]
    Standard,
    /// Success probability raised to 1 + j·m_f.
    Factor { m_f: f64 },
}

impl StMetricVariant {
    pub fn name(&self) -> &'static str {
        match self {
            StMetricVariant::Standard => "standard",
            StMetricVariant::Factor { .. } => "factor",
        }
    }
}


#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StParams {
    pub variant: StMetricVariant,
    pub memory_cost: f64,
}

impl Default for StParams {
    fn default() -> Self {
        StParams { variant: StMetricVariant::Standard, memory_cost: default_memory_cost() }
    }
}

impl StParams {
    pub fn factor(m_f: f64) -> Self {
        StParams { variant: StMetricVariant::Factor { m_f }, ..Default::default() }
    }
}

/// Effective probability of a link used `j` shots after the first (j = 0 for
/// shot 1).
pub fn st_effective_prob(p: f64, width: u32, occupied: u32, j: usize, variant: StMetricVariant) -> Result<f64> {
    let base = channel_success_prob(p, width, occupied)?;
    Ok(match variant {
        StMetricVariant::Factor { m_f } => {
            if m_f < 0.0 {
                return invalid("m_f must be non-negative");
            }
            base.powf(1.0 + j as f64 * m_f)
        }
        StMetricVariant::Standard => p.powf((j as f64) * width as f64) * base,
    })
}

pub struct StView<'a> {
    pub st: &'a SpacetimeNetwork,
    pub params: StParams,
}

impl RouteView for StView<'_> {
    fn n_nodes(&self) -> usize {
        self.st.n_st_nodes()
    }
    fn neighbors(&self, u: usize) -> &[(usize, usize)] {
        self.st.neighbors(u)
    }
    fn n_links(&self) -> usize {
        self.st.links().len()
    }
    fn cost(&self, link: usize, occ: u32) -> f64 {
        let l = &self.st.links()[link];
        if l.capacity.is_some_and(|c| occ >= c) {
            return f64::INFINITY;
        }
        match l.kind {
            StLinkKind::Memory { .. } => self.params.memory_cost.min(COST_CAP),
            StLinkKind::Bell { channel, shot } => {
                let c = self.st.base.channel(channel);
                let q = st_effective_prob(c.prob, c.width, occ, shot - 1, self.params.variant).unwrap_or(0.0);
                let cost = -q.ln() - self.st.base.cz_prob().ln();
                if cost.is_nan() {
                    COST_CAP
                } else {
                    cost.min(COST_CAP)
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct StPlan {
    pub solution: Solution,
    pub k: usize,
    pub routed: Vec<Routed>,
    pub st: Option<SpacetimeNetwork>,
}

/// Route every edge over a `k`-shot expansion in one pass. `None` if some
/// edge finds no path.
pub fn try_k(task: &DistributionTask, k: usize, params: StParams) -> Result<Option<StPlan>> {
    let task = task.preprocessed();
    let mut remaining = strip_local_edges(&task);
    if remaining.edges().is_empty() {
        return Ok(Some(StPlan { solution: Solution::empty(0), k: 0, routed: Vec::new(), st: None }));
    }
    let st = SpacetimeNetwork::build(&task.network, k, params.memory_cost)?;
    let view = StView { st: &st, params };
    let mut router = Router::new(view.n_links());
    for (v, ns) in task.assignment.iter() {
        for &n in ns {
            router.seed(v, st.st_node(n, k + 1));
        }
    }
    greedy_pass(&mut router, &view, &mut remaining, 1)?;
    if !remaining.edges().is_empty() {
        return Ok(None);
    }
    router.settle()?;
    let paths: Vec<StPath> = router
        .routed
        .iter()
        .map(|r| StPath {
            label: crate::model::PathLabel::Edge { v1: r.v1, v2: r.v2 },
            hops: r.hops(),
            fusions: vec![r.fusion()],
        })
        .collect();
    let solution = project_solution(&st, &paths)?;
    Ok(Some(StPlan { solution, k, routed: router.routed, st: Some(st) }))
}

/// Largest expansion tried before giving up.
pub const MAX_ST_SHOTS: usize = 512;

pub fn stp2pgsd_plan(task: &DistributionTask, params: StParams) -> Result<StPlan> {
    task.check()?;
    if strip_local_edges(&task.preprocessed()).edges().is_empty() {
        return try_k(task, 1, params).map(|p| p.expect("nothing to route"));
    }
    let p2p = match p2pgsd_plan(task, MemoryStrategyKind::Standard) {
        Ok(p) => Some(p),
        Err(Error::NoProgress(_)) => None,
        Err(e) => return Err(e),
    };
    let mut hi = p2p.as_ref().map_or(1, |p| p.n_shots.max(1));
    let mut best = match (try_k(task, hi, params)?, p2p) {
        (Some(p), _) => p,
        // The greedy pass can miss at k = hi; the per-shot plan is a
        // no-plan-ahead solution there.
        (None, Some(p)) => StPlan { solution: p.solution, k: p.n_shots, routed: p.routed, st: None },
        (None, None) => loop {
            if hi >= MAX_ST_SHOTS {
                return Err(Error::NoSolution(format!("no space-time plan within {MAX_ST_SHOTS} shots")));
            }
            hi = (hi * 2).min(MAX_ST_SHOTS);
            if let Some(p) = try_k(task, hi, params)? {
                break p;
            }
        },
    };
    let mut lo = 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        match try_k(task, mid, params)? {
            Some(p) => {
                hi = mid;
                best = p;
            }
            None => lo = mid + 1,
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effective_prob_examples() {
        let f = StMetricVariant::Factor { m_f: 1.0 };
        assert_eq!(st_effective_prob(0.5, 1, 0, 1, f).unwrap(), 0.25);
        let s = st_effective_prob(0.5, 2, 0, 1, StMetricVariant::Standard).unwrap();
        assert!((s - 0.25 * 0.75).abs() < 1e-15);
        for v in [f, StMetricVariant::Standard] {
            let q = st_effective_prob(0.7, 3, 1, 0, v).unwrap();
            assert!((q - channel_success_prob(0.7, 3, 1).unwrap()).abs() < 1e-15);
        }
    }
}
