//! Property tests for the invariants of the model, kernels, planners,
//! recovery rules, protocol and tableau.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use gsdist::flows::{max_flow, modified_dijkstra, FlowGraph};
use gsdist::graphs::{gen_assignment, gen_graph_state, gen_waxman_network, rng, GraphKind, GraphStateSpec, TopologyParams};
use gsdist::mgst;
use gsdist::model::{channel_success_prob, compute_metrics, path_cost, Assignment, Channel, DistributionTask, GraphState, Network, Solution};
use gsdist::p2pgsd::{p2pgsd_plan, MemoryStrategyKind};
use gsdist::protocol::{run_adaptive, Planner, ProtocolConfig, Status};
use gsdist::recovery::{
    eum_switch, find_recovery_paths, st_eum_decide, LinkState, MainPath, StEumParams,
};
use gsdist::stabilizer::Tableau;
use gsdist::stp2pgsd::{self, st_effective_prob, StMetricVariant, StParams};
use gsdist::validate::{brute_force_min_shots, is_valid_solution, reachable_nodes};

fn small_task(seed: u64, nodes: usize, nv: usize, kind: GraphKind, prob: Option<f64>) -> DistributionTask {
    let mut net = gen_waxman_network(&TopologyParams { n_nodes: nodes, seed, ..Default::default() }).unwrap();
    if let Some(p) = prob {
        net = net.with_uniform_prob(p).unwrap();
    }
    let gs = gen_graph_state(&GraphStateSpec { kind, n_vertices: nv, seed }).unwrap();
    let asg = gen_assignment(&gs, &net, seed, false).unwrap();
    DistributionTask::new(net, gs, asg).unwrap()
}

fn kind_of(i: u8) -> GraphKind {
    match i % 3 {
        0 => GraphKind::PruferTree,
        1 => GraphKind::Star,
        _ => GraphKind::ErdosRenyi { p: 0.5 },
    }
}

fn planners() -> [Planner; 6] {
    [
        Planner::Mgst,
        Planner::P2p { mem: MemoryStrategyKind::Minimum },
        Planner::P2p { mem: MemoryStrategyKind::Standard },
        Planner::P2p { mem: MemoryStrategyKind::Maximum },
        Planner::StP2p { params: StParams::default() },
        Planner::StP2p { params: StParams::factor(0.5) },
    ]
}

/// Textbook O(n²) Dijkstra.
fn plain_dijkstra(n: usize, adj: &[Vec<(usize, f64)>], s: usize, t: usize) -> f64 {
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    dist[s] = 0.0;
    for _ in 0..n {
        let Some(u) = (0..n).filter(|&u| !done[u] && dist[u].is_finite()).min_by(|&a, &b| dist[a].total_cmp(&dist[b])) else {
            break;
        };
        done[u] = true;
        for &(v, c) in &adj[u] {
            dist[v] = dist[v].min(dist[u] + c);
        }
    }
    dist[t]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn success_prob_monotone(p in 0.0f64..=1.0, dp in 0.0f64..=0.5, w in 1u32..=6) {
        let q = (p + dp).min(1.0);
        let zero = channel_success_prob(p, w, 0).unwrap();
        prop_assert!((zero - (1.0 - (1.0 - p).powi(w as i32))).abs() < 1e-12);
        for occ in 0..w {
            let a = channel_success_prob(p, w, occ).unwrap();
            prop_assert!(channel_success_prob(p, w, occ + 1).unwrap() <= a + 1e-15);
            prop_assert!(channel_success_prob(q, w, occ).unwrap() >= a - 1e-15);
        }
    }

    #[test]
    fn st_effective_prob_decays_with_shot(p in 0.01f64..=1.0, w in 1u32..=4, occ_raw in 0u32..4, m_f in 0.0f64..=3.0) {
        let occ = occ_raw % w;
        for variant in [StMetricVariant::Standard, StMetricVariant::Factor { m_f }] {
            let mut prev = channel_success_prob(p, w, occ).unwrap();
            for j in 0..5 {
                let e = st_effective_prob(p, w, occ, j, variant).unwrap();
                prop_assert!(e <= prev + 1e-15);
                prev = e;
            }
        }
    }

    #[test]
    fn path_cost_adds(probs in prop::collection::vec(0.01f64..=1.0, 2..8), cut in 1usize..7, cz in 0usize..4, ps in 0.1f64..=1.0) {
        let cut = cut.min(probs.len() - 1);
        let whole = path_cost(&probs, cz, ps);
        let parts = path_cost(&probs[..cut], cz, ps) + path_cost(&probs[cut..], 0, ps);
        prop_assert!((whole - parts).abs() < 1e-9);
    }

    #[test]
    fn waxman_connected_and_deterministic(seed in any::<u64>(), n in 4usize..14) {
        let params = TopologyParams { n_nodes: n, seed, ..Default::default() };
        let a = gen_waxman_network(&params).unwrap();
        prop_assert!(a.is_connected());
        prop_assert!(a.channels().iter().all(|c| c.prob > 0.0 && c.prob <= 1.0 && c.width >= 1));
        prop_assert_eq!(a, gen_waxman_network(&params).unwrap());
    }

    #[test]
    fn max_flow_ignores_arc_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..8usize);
        let mut arcs: Vec<(usize, usize, i64, bool)> = (0..r.random_range(1..14))
            .map(|_| (r.random_range(0..n), r.random_range(0..n), r.random_range(0..4i64), r.random_bool(0.3)))
            .filter(|a| a.0 != a.1)
            .collect();
        let build = |arcs: &[(usize, usize, i64, bool)]| {
            let mut g = FlowGraph::new(n);
            for &(a, b, c, u) in arcs {
                if u { g.add_edge(a, b, c, 1.0); } else { g.add_arc(a, b, c, 1.0); }
            }
            max_flow(&g, 0, n - 1).0
        };
        let before = build(&arcs);
        arcs.shuffle(&mut r);
        prop_assert_eq!(before, build(&arcs));
    }

    #[test]
    fn dijkstra_matches_textbook(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..10usize);
        let mut adj = vec![Vec::new(); n];
        let mut ids = vec![Vec::new(); n];
        for id in 0..r.random_range(0..25usize) {
            let (a, b) = (r.random_range(0..n), r.random_range(0..n));
            let c = r.random_range(0.0..5.0);
            adj[a].push((b, c));
            ids[a].push((b, id, c));
        }
        let (s, t) = (0, n - 1);
        let want = plain_dijkstra(n, &adj, s, t);
        match modified_dijkstra(n, &[(s, 0.0)], &[(t, 0.0)], |u, out| out.extend_from_slice(&ids[u])) {
            Ok(p) => prop_assert!((p.cost - want).abs() < 1e-9),
            Err(_) => prop_assert!(want.is_infinite()),
        }
    }

    #[test]
    fn feasibility_monotone_in_k(seed in any::<u64>(), kind in any::<u8>(), nv in 3usize..7) {
        let t = small_task(seed, 8, nv, kind_of(kind), None).preprocessed();
        prop_assume!(t.graph_state.n_vertices() > 0);
        let root = t.alpha(*t.graph_state.vertices().iter().next().unwrap());
        let mut seen_m = false;
        let mut seen_s = false;
        for k in 1..=nv {
            let m = mgst::try_k(&t, root, k).unwrap().is_some();
            prop_assert!(!seen_m || m, "MGST feasible below k={} only", k);
            seen_m |= m;
            let s = stp2pgsd::try_k(&t, k, StParams::default()).unwrap().is_some();
            prop_assert!(!seen_s || s, "ST feasible below k={} only", k);
            seen_s |= s;
        }
    }

    #[test]
    fn planners_valid_and_bounded(seed in any::<u64>(), kind in any::<u8>(), nv in 2usize..9) {
        let t = small_task(seed, 10, nv, kind_of(kind), Some(1.0));
        let n_vertices = t.preprocessed().graph_state.n_vertices();
        for pl in planners() {
            let sol = pl.plan(&t).unwrap();
            prop_assert!(is_valid_solution(&sol, &t).unwrap().valid, "{:?}", pl);
            sol.check(&t.network).unwrap();
            if pl == Planner::Mgst {
                prop_assert!(sol.n_shots() <= n_vertices);
            }
        }
        // One edge per shot at least.
        let p2p = p2pgsd_plan(&t, MemoryStrategyKind::Standard).unwrap();
        prop_assert!(p2p.solution.n_shots() <= t.graph_state.edges().len().max(1));
        let st = stp2pgsd::stp2pgsd_plan(&t, StParams { memory_cost: 0.0, ..Default::default() }).unwrap();
        prop_assert!(st.solution.n_shots() <= p2p.solution.n_shots());
    }

    #[test]
    fn reachable_grows_with_paths(seed in any::<u64>(), kind in any::<u8>(), nv in 3usize..8) {
        let t = small_task(seed, 10, nv, kind_of(kind), Some(1.0));
        let sol = p2pgsd_plan(&t, MemoryStrategyKind::Standard).unwrap().solution;
        let mut partial = Solution::empty(sol.n_shots());
        let mut prev: BTreeMap<usize, BTreeSet<(usize, usize)>> = BTreeMap::new();
        for path in &sol.paths {
            partial.push_path(&t.network, path.clone());
            for &v in t.graph_state.vertices() {
                let now = reachable_nodes(&partial, &t, v).unwrap();
                if let Some(before) = prev.get(&v) {
                    prop_assert!(before.is_subset(&now));
                }
                prev.insert(v, now);
            }
        }
    }

    #[test]
    fn unit_probability_runs_follow_the_plan(seed in any::<u64>(), kind in any::<u8>(), nv in 2usize..9) {
        let t = small_task(seed, 10, nv, kind_of(kind), Some(1.0));
        for pl in planners() {
            let ideal = compute_metrics(&pl.plan(&t).unwrap(), &t.network).unwrap();
            let tr = run_adaptive(&t, pl, ProtocolConfig::default(), seed).unwrap();
            prop_assert_eq!(tr.status, Status::Success);
            prop_assert_eq!(tr.metrics, ideal, "{:?}", pl);
        }
    }

    #[test]
    fn trace_metrics_sum_records(seed in any::<u64>(), kind in any::<u8>(), nv in 2usize..8, st_eum in any::<bool>()) {
        let t = small_task(seed, 10, nv, kind_of(kind), None);
        let cfg = ProtocolConfig { st_eum, ..Default::default() };
        for pl in [Planner::Mgst, Planner::P2p { mem: MemoryStrategyKind::Standard }, Planner::StP2p { params: StParams::default() }] {
            let tr = run_adaptive(&t, pl, cfg, seed).unwrap();
            prop_assert_eq!(tr.metrics.shots, tr.shots.len() as u64);
            prop_assert_eq!(tr.metrics.bell_pairs, tr.shots.iter().map(|s| s.bell_pairs).sum::<u64>());
            prop_assert_eq!(tr.metrics.cum_memory, tr.shots.iter().map(|s| s.memory).sum::<u64>());
            for s in &tr.shots {
                for &(c, attempts, succ) in &s.links {
                    prop_assert!(succ <= attempts);
                    if let Some(c) = c {
                        prop_assert!(attempts <= t.network.channel(c).width);
                    }
                }
            }
            prop_assert_eq!(tr.to_json(), run_adaptive(&t, pl, cfg, seed).unwrap().to_json());
        }
    }

    #[test]
    fn eum_never_worse_than_main(seed in any::<u64>()) {
        let mut r = rng(seed);
        let hops = r.random_range(2..6usize);
        let extra = r.random_range(0..4usize);
        let n = hops + 1 + extra;
        let mut chans: Vec<Channel> = (0..hops).map(|i| Channel::new(i, i + 1, r.random_range(1..3), r.random_range(0.2..1.0))).collect();
        for _ in 0..r.random_range(0..8) {
            let (a, b) = (r.random_range(0..n), r.random_range(0..n));
            if a != b && !chans.iter().any(|c| c.touches(a) && c.touches(b)) {
                chans.push(Channel::new(a, b, r.random_range(1..3), r.random_range(0.2..1.0)));
            }
        }
        let net = Network::simple(n, chans).unwrap();
        let main = MainPath::new((0..=hops).collect(), (0..hops).collect()).unwrap();
        let mut free: Vec<u32> = net.channels().iter().map(|c| c.width).collect();
        for f in free.iter_mut().take(hops) {
            *f -= 1;
        }
        let plan = find_recovery_paths(&main, &net, &mut free, 2);
        let mut known = BTreeMap::new();
        for c in 0..net.channels().len() {
            if r.random_bool(0.7) {
                known.insert(c, r.random_range(0..=net.channel(c).width));
            }
        }
        let ls = LinkState { known };
        let main_cost: f64 = (0..hops)
            .map(|i| match ls.successes(i) {
                Some(s) if s >= 1 => 0.0,
                Some(_) => f64::INFINITY,
                None => -channel_success_prob(net.channel(i).prob, net.channel(i).width, 0).unwrap().ln(),
            })
            .sum();
        let all: BTreeSet<usize> = (0..n).collect();
        let never = StEumParams { mem_cost: f64::INFINITY, prefactor: None };
        for node in 0..=hops {
            let sw = eum_switch(&plan, &ls, &net, node).unwrap();
            if main_cost.is_finite() {
                let sw = sw.expect("main path is available");
                prop_assert!(sw.cost <= main_cost + 1e-6);
            }
            let (st, _) = st_eum_decide(&plan, &ls, &net, node, &all, never).unwrap();
            prop_assert_eq!(st, sw);
        }
    }

    #[test]
    fn clifford_ops_keep_a_stabilizer_group(ops in prop::collection::vec((0u8..4, 0usize..5, 0usize..5), 0..40)) {
        let mut t = Tableau::plus(5);
        for (op, a, b) in ops {
            match op {
                0 => t.apply_h(a).unwrap(),
                1 if a != b => t.apply_cz(a, b).unwrap(),
                2 => t.apply_z(a).unwrap(),
                _ => t.apply_x(a).unwrap(),
            }
            prop_assert_eq!(t.rank(), 5);
            prop_assert!(t.commuting());
        }
    }
}

/// Random connected width-1 network with a random state on `nv` vertices.
fn tiny(seed: u64, nv: usize) -> DistributionTask {
    let mut r = rng(seed);
    let n = r.random_range(3..=6usize);
    let mut chans: Vec<(usize, usize)> = (1..n).map(|v| (r.random_range(0..v), v)).collect();
    for a in 0..n {
        for b in a + 1..n {
            if !chans.contains(&(a, b)) && r.random_bool(0.25) {
                chans.push((a, b));
            }
        }
    }
    let net = Network::simple(n, chans.into_iter().map(|(a, b)| Channel::new(a, b, 1, 1.0)).collect()).unwrap();
    let mut edges: Vec<(usize, usize)> = (1..nv).map(|v| (r.random_range(0..v), v)).collect();
    if nv > 2 && r.random_bool(0.5) {
        edges.push((0, nv - 1));
    }
    edges.sort();
    edges.dedup();
    let nodes: Vec<usize> = (0..nv).map(|_| r.random_range(0..n)).collect();
    DistributionTask::new(net, GraphState::on(nv, &edges).unwrap(), Assignment::from_slice(&nodes)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn planners_never_beat_the_oracle(seed in any::<u64>(), nv in 2usize..5) {
        let t = tiny(seed, nv);
        let Some(best) = brute_force_min_shots(&t, 3).unwrap() else { return Ok(()) };
        for pl in planners() {
            let sol = pl.plan(&t).unwrap();
            prop_assert!(sol.n_shots() >= best, "{:?}: {} < {}", pl, sol.n_shots(), best);
        }
    }
}
