//! Binary-symplectic stabilizer tableau (destabilizer form) and exhaustive
//! checks of the CZ-layer teleportation and fusion patterns.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::model::{GraphState, VertexId};

/// Largest graph `verify_cz_layer_teleport` accepts.
pub const MAX_TELEPORT_VERTICES: usize = 6;
/// Largest total size `verify_fusion` accepts.
pub const MAX_FUSION_VERTICES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
struct Row {
    x: Vec<bool>,
    z: Vec<bool>,
    /// true means the sign is −1.
    r: bool,
}

impl Row {
    fn zero(n: usize) -> Self {
        Row { x: vec![false; n], z: vec![false; n], r: false }
    }
}

/// Power of i picked up when multiplying single-qubit Paulis (x1,z1)·(x2,z2).
fn g(x1: bool, z1: bool, x2: bool, z2: bool) -> i32 {
    let (x2, z2) = (x2 as i32, z2 as i32);
    match (x1, z1) {
        (false, false) => 0,
        (true, true) => z2 - x2,
        (true, false) => z2 * (2 * x2 - 1),
        (false, true) => x2 * (1 - 2 * z2),
    }
}

/// `h := i · h`.
fn mul_into(h: &mut Row, i: &Row) {
    let mut e = 2 * h.r as i32 + 2 * i.r as i32;
    for q in 0..h.x.len() {
        e += g(i.x[q], i.z[q], h.x[q], h.z[q]);
        h.x[q] ^= i.x[q];
        h.z[q] ^= i.z[q];
    }
    h.r = e.rem_euclid(4) == 2;
}

/// Stabilizer state on `n` qubits. Rows `0..n` are destabilizers, `n..2n`
/// the stabilizer generators.
#[derive(Clone, Debug)]
pub struct Tableau {
    n: usize,
    rows: Vec<Row>,
}

/// Result of a single-qubit measurement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    /// +1 or −1.
    pub value: i8,
    pub random: bool,
}

impl Tableau {
    /// |0⟩^n.
    pub fn zeros(n: usize) -> Self {
        let mut rows = Vec::with_capacity(2 * n);
        for i in 0..n {
            let mut r = Row::zero(n);
            r.x[i] = true;
            rows.push(r);
        }
        for i in 0..n {
            let mut r = Row::zero(n);
            r.z[i] = true;
            rows.push(r);
        }
        Tableau { n, rows }
    }

    /// |+⟩^n.
    pub fn plus(n: usize) -> Self {
        let mut t = Tableau::zeros(n);
        for q in 0..n {
            t.h(q);
        }
        t
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    fn check(&self, qs: &[usize]) -> Result<()> {
        if let Some(&q) = qs.iter().find(|&&q| q >= self.n) {
            return invalid(format!("qubit {q} out of range for {} qubits", self.n));
        }
        Ok(())
    }

    fn h(&mut self, a: usize) {
        for r in &mut self.rows {
            r.r ^= r.x[a] && r.z[a];
            std::mem::swap(&mut r.x[a], &mut r.z[a]);
        }
    }

    fn cnot(&mut self, a: usize, b: usize) {
        for r in &mut self.rows {
            r.r ^= r.x[a] && r.z[b] && (r.x[b] == r.z[a]);
            r.x[b] ^= r.x[a];
            r.z[a] ^= r.z[b];
        }
    }

    pub fn apply_h(&mut self, a: usize) -> Result<()> {
        self.check(&[a])?;
        self.h(a);
        Ok(())
    }

    pub fn apply_cz(&mut self, a: usize, b: usize) -> Result<()> {
        self.check(&[a, b])?;
        if a == b {
            return invalid("CZ needs two distinct qubits");
        }
        self.h(b);
        self.cnot(a, b);
        self.h(b);
        Ok(())
    }

    pub fn apply_z(&mut self, a: usize) -> Result<()> {
        self.check(&[a])?;
        for r in &mut self.rows {
            r.r ^= r.x[a];
        }
        Ok(())
    }

    pub fn apply_x(&mut self, a: usize) -> Result<()> {
        self.check(&[a])?;
        for r in &mut self.rows {
            r.r ^= r.z[a];
        }
        Ok(())
    }

    /// Measure Z on `a`. A random outcome is set to `forced` (true = −1).
    pub fn measure_z(&mut self, a: usize, forced: bool) -> Result<Outcome> {
        self.check(&[a])?;
        let n = self.n;
        if let Some(p) = (n..2 * n).find(|&p| self.rows[p].x[a]) {
            let pivot = self.rows[p].clone();
            for i in 0..2 * n {
                if i != p && self.rows[i].x[a] {
                    mul_into(&mut self.rows[i], &pivot);
                }
            }
            self.rows[p - n] = pivot;
            let mut m = Row::zero(n);
            m.z[a] = true;
            m.r = forced;
            self.rows[p] = m;
            return Ok(Outcome { value: if forced { -1 } else { 1 }, random: true });
        }
        let mut s = Row::zero(n);
        for i in 0..n {
            if self.rows[i].x[a] {
                let row = self.rows[i + n].clone();
                mul_into(&mut s, &row);
            }
        }
        Ok(Outcome { value: if s.r { -1 } else { 1 }, random: false })
    }

    /// Measure X on `a`; see [`Tableau::measure_z`].
    pub fn measure_x(&mut self, a: usize, forced: bool) -> Result<Outcome> {
        self.check(&[a])?;
        self.h(a);
        let o = self.measure_z(a, forced);
        self.h(a);
        o
    }

    /// Stabilizer generators as (X bits, Z bits, sign −1).
    pub fn generators(&self) -> Vec<(Vec<bool>, Vec<bool>, bool)> {
        self.rows[self.n..].iter().map(|r| (r.x.clone(), r.z.clone(), r.r)).collect()
    }

    /// GF(2) rank of the stabilizer check matrix.
    pub fn rank(&self) -> usize {
        self.canonical().len()
    }

    /// Whether all stabilizer generators commute pairwise.
    pub fn commuting(&self) -> bool {
        let s = &self.rows[self.n..];
        s.iter().enumerate().all(|(i, a)| {
            s[i + 1..].iter().all(|b| {
                let k = (0..self.n).filter(|&q| (a.x[q] && b.z[q]) ^ (a.z[q] && b.x[q])).count();
                k % 2 == 0
            })
        })
    }

    /// Reduced row echelon form of the generators, columns ordered
    /// x_0..x_{n-1}, z_0..z_{n-1}. Equal states give equal forms.
    pub fn canonical(&self) -> Vec<(Vec<bool>, Vec<bool>, bool)> {
        let n = self.n;
        let mut rows: Vec<Row> = self.rows[n..].to_vec();
        let bit = |r: &Row, c: usize| if c < n { r.x[c] } else { r.z[c - n] };
        let mut rank = 0;
        for c in 0..2 * n {
            let Some(p) = (rank..rows.len()).find(|&i| bit(&rows[i], c)) else { continue };
            rows.swap(rank, p);
            let pivot = rows[rank].clone();
            for i in 0..rows.len() {
                if i != rank && bit(&rows[i], c) {
                    mul_into(&mut rows[i], &pivot);
                }
            }
            rank += 1;
        }
        rows.truncate(rank);
        rows.into_iter().map(|r| (r.x, r.z, r.r)).collect()
    }

    /// Same state as `other`.
    pub fn same_state(&self, other: &Tableau) -> bool {
        self.n == other.n && self.canonical() == other.canonical()
    }
}

/// Dense relabelling of a graph state's vertices.
fn dense(g: &GraphState) -> (Vec<VertexId>, Vec<(usize, usize)>) {
    let verts: Vec<VertexId> = g.vertices().iter().copied().collect();
    let idx = |v: VertexId| verts.binary_search(&v).expect("edge endpoint is a vertex");
    let edges = g.edges().iter().map(|&(a, b)| (idx(a), idx(b))).collect();
    (verts, edges)
}

/// Tableau of a graph state: generator i is X_i times Z on its neighbours,
/// all signs +. Qubit i is the i-th smallest vertex.
pub fn graph_state_tableau(g: &GraphState) -> Tableau {
    let (verts, edges) = dense(g);
    let mut t = Tableau::plus(verts.len());
    for (a, b) in edges {
        t.apply_cz(a, b).expect("indices in range");
    }
    t
}

/// Teleport the CZ layer of the graph state on `graph` (qubits `resource`)
/// onto target qubits. `teleported[i]` gives (ancilla, target) for the
/// vertices that are moved; others act on themselves. Measurements follow
/// `forced`, one bit per teleported vertex for the resource qubit and one
/// for the ancilla. Returns the qubits measured with their outcomes.
fn teleport_layer(
    t: &mut Tableau,
    resource: &[usize],
    edges: &[(usize, usize)],
    teleported: &[Option<(usize, usize)>],
    forced: u64,
) -> Result<Vec<(usize, i8)>> {
    let k = resource.len();
    for i in 0..k {
        if let Some((anc, tgt)) = teleported[i] {
            t.apply_cz(resource[i], anc)?;
            t.apply_cz(anc, tgt)?;
        }
    }
    let mut m = vec![1i8; k];
    let mut mp = vec![1i8; k];
    let mut measured = Vec::new();
    let mut bit = 0;
    for i in 0..k {
        if let Some((anc, _)) = teleported[i] {
            m[i] = t.measure_x(resource[i], forced >> bit & 1 == 1)?.value;
            mp[i] = t.measure_x(anc, forced >> (bit + 1) & 1 == 1)?.value;
            bit += 2;
            measured.push((resource[i], m[i]));
            measured.push((anc, mp[i]));
        }
    }
    // Byproduct on the qubit now carrying vertex i: Z when m_i times the
    // ancilla outcomes of its teleported neighbours is −1. An untouched
    // vertex counts m_i = +1.
    for i in 0..k {
        let mut s = m[i];
        for &(a, b) in edges {
            let j = if a == i {
                b
            } else if b == i {
                a
            } else {
                continue;
            };
            if teleported[j].is_some() {
                s *= mp[j];
            }
        }
        if s == -1 {
            let q = teleported[i].map_or(resource[i], |(_, tgt)| tgt);
            t.apply_z(q)?;
        }
    }
    Ok(measured)
}

/// Fix measured qubits in the reference state to their observed X outcomes.
fn with_measured(t: &mut Tableau, measured: &[(usize, i8)]) -> Result<()> {
    for &(q, v) in measured {
        if v == -1 {
            t.apply_z(q)?;
        }
    }
    Ok(())
}

/// Check that the local CZ/measure/correct procedure turns a distributed
/// graph state into its CZ layer on fresh |+⟩ computation qubits, in every
/// measurement branch.
pub fn verify_cz_layer_teleport(g: &GraphState) -> Result<bool> {
    let k = g.n_vertices();
    if k > MAX_TELEPORT_VERTICES {
        return invalid(format!("at most {MAX_TELEPORT_VERTICES} vertices, got {k}"));
    }
    let (_, edges) = dense(g);
    // Qubits: resource i, ancilla k+i, computation 2k+i.
    let resource: Vec<usize> = (0..k).collect();
    let teleported: Vec<Option<(usize, usize)>> = (0..k).map(|i| Some((k + i, 2 * k + i))).collect();
    let mut start = Tableau::plus(3 * k);
    for &(a, b) in &edges {
        start.apply_cz(a, b)?;
    }
    let ok = (0..1u64 << (2 * k)).into_par_iter().map(|forced| -> Result<bool> {
        let mut t = start.clone();
        let measured = teleport_layer(&mut t, &resource, &edges, &teleported, forced)?;
        let mut want = Tableau::plus(3 * k);
        for &(a, b) in &edges {
            want.apply_cz(2 * k + a, 2 * k + b)?;
        }
        with_measured(&mut want, &measured)?;
        Ok(t.same_state(&want))
    });
    let all: Result<Vec<bool>> = ok.collect();
    Ok(all?.into_iter().all(|b| b))
}

/// Graph with `absorb`'s neighbours merged into `keep` and `absorb` removed.
/// Shared neighbours cancel.
pub fn merged_graph(g: &GraphState, keep: VertexId, absorb: VertexId) -> Result<GraphState> {
    if keep == absorb || !g.vertices().contains(&keep) || !g.vertices().contains(&absorb) {
        return invalid("fusion needs two distinct vertices of the graph");
    }
    let mut edges: BTreeSet<(VertexId, VertexId)> = g.edges().iter().copied().filter(|&(a, b)| a != absorb && b != absorb).collect();
    for u in g.neighbors(absorb) {
        if u == keep {
            continue;
        }
        let e = (keep.min(u), keep.max(u));
        if !edges.remove(&e) {
            edges.insert(e);
        }
    }
    GraphState::new(g.vertices().iter().copied().filter(|&v| v != absorb), edges)
}

/// Fuse vertex `b` of `g2` into vertex `a` of `g1` (held at one node) and
/// check that every branch yields the merged graph on the remaining qubits.
///
/// The pattern is the teleportation procedure restricted to `b`: an ancilla
/// joined by CZ to `b` and to `a`, then X measurements of `b` and the
/// ancilla. Byproducts: Z on `a` if m_b = −1, and Z on each neighbour of `b`
/// if the ancilla gave −1.
pub fn verify_fusion(g1: &GraphState, g2: &GraphState, a: VertexId, b: VertexId) -> Result<bool> {
    let (v1, e1) = dense(g1);
    let (v2, e2) = dense(g2);
    let (n1, n2) = (v1.len(), v2.len());
    if n1 + n2 > MAX_FUSION_VERTICES {
        return invalid(format!("at most {MAX_FUSION_VERTICES} vertices in total"));
    }
    let Ok(ia) = v1.binary_search(&a) else { return invalid("fused vertex missing from the first graph") };
    let Ok(ib) = v2.binary_search(&b) else { return invalid("fused vertex missing from the second graph") };
    // Qubits: g1 0..n1, g2 n1..n1+n2, ancilla last.
    let anc = n1 + n2;
    let mut start = Tableau::plus(anc + 1);
    for &(x, y) in &e1 {
        start.apply_cz(x, y)?;
    }
    for &(x, y) in &e2 {
        start.apply_cz(n1 + x, n1 + y)?;
    }
    let resource: Vec<usize> = (n1..n1 + n2).collect();
    let teleported: Vec<Option<(usize, usize)>> = (0..n2).map(|i| (i == ib).then_some((anc, ia))).collect();
    // Expected graph over the union with b's edges moved onto a.
    let mut union_edges: BTreeSet<(usize, usize)> = e1.iter().copied().collect();
    union_edges.extend(e2.iter().map(|&(x, y)| (n1 + x, n1 + y)));
    let union = GraphState::new(0..n1 + n2, union_edges)?;
    let merged = merged_graph(&union, ia, n1 + ib)?;
    for forced in 0..4u64 {
        let mut t = start.clone();
        let measured = teleport_layer(&mut t, &resource, &e2, &teleported, forced)?;
        let mut want = Tableau::plus(anc + 1);
        for &(x, y) in merged.edges() {
            want.apply_cz(x, y)?;
        }
        with_measured(&mut want, &measured)?;
        if !t.same_state(&want) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One representative per isomorphism class of connected graphs on `n`
/// vertices, labelled 0..n.
pub fn connected_graph_classes(n: usize) -> Vec<GraphState> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let perms = permutations(n);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for mask in 0u64..1 << pairs.len() {
        let edges: Vec<(usize, usize)> = pairs.iter().enumerate().filter(|&(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect();
        let Ok(g) = GraphState::on(n, &edges) else { continue };
        if !connected(&g) {
            continue;
        }
        let key = perms
            .iter()
            .map(|p| {
                let mut m = 0u64;
                for &(a, b) in &edges {
                    let (x, y) = (p[a].min(p[b]), p[a].max(p[b]));
                    m |= 1 << pairs.iter().position(|&e| e == (x, y)).unwrap();
                }
                m
            })
            .min()
            .unwrap();
        if seen.insert(key) {
            out.push(g);
        }
    }
    out
}

fn connected(g: &GraphState) -> bool {
    let Some(&s) = g.vertices().iter().next() else { return true };
    let mut seen = BTreeSet::from([s]);
    let mut stack = vec![s];
    while let Some(u) = stack.pop() {
        for w in g.neighbors(u) {
            if seen.insert(w) {
                stack.push(w);
            }
        }
    }
    seen.len() == g.n_vertices()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(center: VertexId, leaves: &[VertexId]) -> GraphState {
        let edges: Vec<_> = leaves.iter().map(|&l| (center.min(l), center.max(l))).collect();
        GraphState::new(std::iter::once(center).chain(leaves.iter().copied()), edges).unwrap()
    }

    #[test]
    fn graph_tableaux() {
        let t = graph_state_tableau(&GraphState::on(2, &[]).unwrap());
        assert_eq!(t.generators(), vec![(vec![true, false], vec![false, false], false), (vec![false, true], vec![false, false], false)]);
        let t = graph_state_tableau(&GraphState::on(2, &[(0, 1)]).unwrap());
        let mut g = t.generators();
        g.sort();
        let mut want = vec![(vec![true, false], vec![false, true], false), (vec![false, true], vec![true, false], false)];
        want.sort();
        assert_eq!(g, want);
        let tri = graph_state_tableau(&GraphState::on(3, &[(0, 1), (1, 2), (0, 2)]).unwrap());
        assert_eq!(tri.rank(), 3);
        assert!(tri.commuting());
    }

    #[test]
    fn gates_and_measurements() {
        let g = GraphState::on(3, &[(0, 1), (1, 2)]).unwrap();
        let t0 = graph_state_tableau(&g);
        let mut t = t0.clone();
        t.apply_cz(0, 2).unwrap();
        t.apply_cz(0, 2).unwrap();
        assert!(t.same_state(&t0));
        let mut p = Tableau::plus(1);
        assert_eq!(p.measure_x(0, true).unwrap(), Outcome { value: 1, random: false });
        let mut q = Tableau::plus(1);
        q.apply_z(0).unwrap();
        assert_eq!(q.measure_x(0, false).unwrap().value, -1);
        for forced in [false, true] {
            let mut t = t0.clone();
            let o = t.measure_x(1, forced).unwrap();
            assert!(o.random);
            assert_eq!(o.value == -1, forced);
            assert_eq!(t.measure_x(1, !forced).unwrap(), Outcome { value: o.value, random: false });
        }
        assert!(t0.clone().apply_cz(0, 3).is_err());
    }

    #[test]
    fn teleport_examples() {
        assert!(verify_cz_layer_teleport(&GraphState::on(3, &[]).unwrap()).unwrap());
        assert!(verify_cz_layer_teleport(&GraphState::on(2, &[(0, 1)]).unwrap()).unwrap());
        let grid = GraphState::on(4, &[(0, 1), (2, 3), (0, 2), (1, 3)]).unwrap();
        assert!(verify_cz_layer_teleport(&grid).unwrap());
        assert!(verify_cz_layer_teleport(&GraphState::on(7, &[]).unwrap()).is_err());
    }

    #[test]
    fn wrong_correction_is_caught() {
        // Dropping the byproducts must break some branch.
        let g = GraphState::on(2, &[(0, 1)]).unwrap();
        let (_, edges) = dense(&g);
        let mut start = Tableau::plus(6);
        start.apply_cz(0, 1).unwrap();
        let mut bad = false;
        for forced in 0..16u64 {
            let mut t = start.clone();
            for i in 0..2 {
                t.apply_cz(i, 2 + i).unwrap();
                t.apply_cz(2 + i, 4 + i).unwrap();
            }
            let mut measured = Vec::new();
            for i in 0..2 {
                measured.push((i, t.measure_x(i, forced >> (2 * i) & 1 == 1).unwrap().value));
                measured.push((2 + i, t.measure_x(2 + i, forced >> (2 * i + 1) & 1 == 1).unwrap().value));
            }
            let mut want = Tableau::plus(6);
            for &(a, b) in &edges {
                want.apply_cz(4 + a, 4 + b).unwrap();
            }
            with_measured(&mut want, &measured).unwrap();
            bad |= !t.same_state(&want);
        }
        assert!(bad);
    }

    #[test]
    fn fusion_examples() {
        assert!(verify_fusion(&star(0, &[1, 2]), &star(0, &[1, 2]), 0, 0).unwrap());
        let merged = merged_graph(&GraphState::on(6, &[(0, 1), (0, 2), (3, 4), (3, 5)]).unwrap(), 0, 3).unwrap();
        assert_eq!(merged.n_vertices(), 5);
        assert_eq!(merged.degree(0), 4);
        let lone = GraphState::on(1, &[]).unwrap();
        assert!(verify_fusion(&star(0, &[1, 2]), &lone, 0, 0).unwrap());
    }

    #[test]
    fn class_counts() {
        let counts: Vec<usize> = (1..=5).map(|n| connected_graph_classes(n).len()).collect();
        assert_eq!(counts, vec![1, 1, 2, 6, 21]);
    }
}
