//! Chordal extension, maximal cliques and clique-wise PSD decomposition.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{embed_hermitian_psd, ConeConstraint, HermitianBlock, HermitianError};
use crate::network::Network;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChordalError {
    #[error("clique {clique} contains vertex {vertex} but the block has side {side}")]
    CliqueVertexOutOfRange { clique: usize, vertex: usize, side: usize },
    #[error(transparent)]
    Block(#[from] HermitianError),
}

/// Simple undirected graph on vertices `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityGraph {
    pub n: usize,
    adj: Vec<BTreeSet<usize>>,
}

impl SparsityGraph {
    pub fn new(n: usize) -> Self {
        SparsityGraph { n, adj: vec![BTreeSet::new(); n] }
    }

    /// Loops are ignored and repeated edges collapse.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = SparsityGraph::new(n);
        for (a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    pub fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a].insert(b);
            self.adj[b].insert(a);
        }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(&b)
    }

    pub fn neighbors(&self, v: usize) -> &BTreeSet<usize> {
        &self.adj[v]
    }

    /// Edges as `(smaller, larger)` pairs in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nb) in self.adj.iter().enumerate() {
            out.extend(nb.range(a + 1..).map(|&b| (a, b)));
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(|s| s.len()).sum::<usize>() / 2
    }
}

/// One vertex per bus, one edge per connected bus pair.
pub fn build_graph(net: &Network) -> SparsityGraph {
    SparsityGraph::from_edges(net.n_buses(), net.branches.iter().map(|b| (b.from_bus, b.to_bus)))
}

/// Thresholds for merging neighbouring cliques of the clique tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeOptions {
    /// Largest side of the real-embedded block (twice the clique size).
    pub max_embedded_side: usize,
    /// Largest relative growth in packed matrix entries caused by a merge.
    pub max_fill_increase: f64,
}

impl Default for MergeOptions {
    fn default() -> Self {
        MergeOptions { max_embedded_side: 24, max_fill_increase: 0.10 }
    }
}

impl MergeOptions {
    pub fn disabled() -> Self {
        MergeOptions { max_embedded_side: 0, max_fill_increase: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliqueCover {
    /// Sorted vertex lists.
    pub cliques: Vec<Vec<usize>>,
    /// Edges of the chordal extension that are not in the original graph.
    pub fill_edges: Vec<(usize, usize)>,
    pub elimination_order: Vec<usize>,
    /// Clique-tree edges as index pairs into `cliques`.
    pub tree: Vec<(usize, usize)>,
}

impl CliqueCover {
    /// The chordal extension: the original edges plus fill.
    pub fn extension(&self, g: &SparsityGraph) -> SparsityGraph {
        let mut ext = g.clone();
        for &(a, b) in &self.fill_edges {
            ext.add_edge(a, b);
        }
        ext
    }

    pub fn fill_in(&self) -> usize {
        self.fill_edges.len()
    }
}

pub fn chordal_extension(g: &SparsityGraph) -> CliqueCover {
    chordal_extension_with(g, &MergeOptions::default())
}

/// Symbolic elimination under a minimum-degree ordering (ties to the smallest
/// index), maximal cliques from the elimination, then greedy merging along a
/// maximum-weight clique tree.
pub fn chordal_extension_with(g: &SparsityGraph, merge: &MergeOptions) -> CliqueCover {
    let n = g.n;
    let mut work = g.adj.clone();
    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    let mut candidates: Vec<Vec<usize>> = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| alive[v])
            .min_by_key(|&v| (work[v].len(), v))
            .expect("vertex left");
        let nb: Vec<usize> = work[v].iter().copied().collect();
        for (i, &a) in nb.iter().enumerate() {
            for &b in &nb[i + 1..] {
                work[a].insert(b);
                work[b].insert(a);
            }
        }
        for &a in &nb {
            work[a].remove(&v);
        }
        alive[v] = false;
        order.push(v);
        let mut c = nb;
        c.push(v);
        c.sort_unstable();
        candidates.push(c);
    }

    let mut cliques = maximal_only(candidates);
    let mut tree = clique_tree(&cliques);
    merge_cliques(&mut cliques, &mut tree, merge);

    let mut ext = SparsityGraph::new(n);
    for c in &cliques {
        for (i, &a) in c.iter().enumerate() {
            for &b in &c[i + 1..] {
                ext.add_edge(a, b);
            }
        }
    }
    let fill_edges = ext.edges().into_iter().filter(|&(a, b)| !g.has_edge(a, b)).collect();
    CliqueCover { cliques, fill_edges, elimination_order: order, tree }
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|v| b.binary_search(v).is_ok())
}

/// Drops duplicates and sets contained in another, keeping first-seen order.
fn maximal_only(candidates: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let mut keep: Vec<Vec<usize>> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let dominated = candidates.iter().enumerate().any(|(j, d)| {
            j != i && d.len() >= c.len() && is_subset(c, d) && (d.len() > c.len() || j < i)
        });
        if !dominated {
            keep.push(c.clone());
        }
    }
    keep
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|v| b.binary_search(v).is_ok()).count()
}

/// Maximum-weight spanning forest of the clique intersection graph (Prim,
/// smallest index first on ties).
fn clique_tree(cliques: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let k = cliques.len();
    let mut tree = Vec::new();
    if k == 0 {
        return tree;
    }
    let mut in_tree = vec![false; k];
    let mut best: Vec<(usize, Option<usize>)> = vec![(0, None); k];
    let mut current = 0;
    for _ in 0..k {
        in_tree[current] = true;
        for j in 0..k {
            if !in_tree[j] {
                let w = intersection_size(&cliques[current], &cliques[j]);
                if best[j].1.is_none() || w > best[j].0 {
                    best[j] = (w, Some(current));
                }
            }
        }
        let next = (0..k).filter(|&j| !in_tree[j]).max_by(|&a, &b| best[a].0.cmp(&best[b].0).then(b.cmp(&a)));
        match next {
            Some(j) => {
                if best[j].0 > 0 {
                    tree.push((best[j].1.expect("set"), j));
                }
                current = j;
            }
            None => break,
        }
    }
    tree
}

fn packed(size: usize) -> usize {
    size * (size + 1) / 2
}

fn merge_cliques(cliques: &mut Vec<Vec<usize>>, tree: &mut Vec<(usize, usize)>, opts: &MergeOptions) {
    loop {
        let mut pick: Option<(f64, usize, Vec<usize>)> = None;
        for (e, &(a, b)) in tree.iter().enumerate() {
            let (ca, cb) = (&cliques[a], &cliques[b]);
            let mut union: Vec<usize> = ca.iter().chain(cb.iter()).copied().collect();
            union.sort_unstable();
            union.dedup();
            if 2 * union.len() > opts.max_embedded_side {
                continue;
            }
            let shared = packed(ca.len()) + packed(cb.len()) - packed(intersection_size(ca, cb));
            let growth = (packed(union.len()) - shared) as f64 / shared as f64;
            if growth <= opts.max_fill_increase && pick.as_ref().is_none_or(|p| growth < p.0) {
                pick = Some((growth, e, union));
            }
        }
        let Some((_, e, union)) = pick else { return };
        let (keep, gone) = tree.remove(e);
        cliques[keep] = union;
        for edge in tree.iter_mut() {
            if edge.0 == gone {
                edge.0 = keep;
            }
            if edge.1 == gone {
                edge.1 = keep;
            }
        }
        cliques.remove(gone);
        for edge in tree.iter_mut() {
            if edge.0 > gone {
                edge.0 -= 1;
            }
            if edge.1 > gone {
                edge.1 -= 1;
            }
        }
    }
}

/// Maximum cardinality search followed by a perfect-elimination check.
pub fn is_chordal(g: &SparsityGraph) -> bool {
    let n = g.n;
    let mut weight = vec![0usize; n];
    let mut numbered = vec![false; n];
    // position in the elimination order (reverse of the visit order)
    let mut pos = vec![0usize; n];
    for step in (0..n).rev() {
        let v = (0..n)
            .filter(|&v| !numbered[v])
            .max_by(|&a, &b| weight[a].cmp(&weight[b]).then(b.cmp(&a)))
            .expect("vertex left");
        numbered[v] = true;
        pos[v] = step;
        for &u in g.neighbors(v) {
            if !numbered[u] {
                weight[u] += 1;
            }
        }
    }
    let mut order = vec![0usize; n];
    for v in 0..n {
        order[pos[v]] = v;
    }
    for &v in &order {
        let later: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| pos[u] > pos[v]).collect();
        if let Some(&parent) = later.iter().min_by_key(|&&u| pos[u]) {
            if later.iter().any(|&u| u != parent && !g.has_edge(parent, u)) {
                return false;
            }
        }
    }
    true
}

/// DOT rendering of the chordal extension; fill edges are dashed.
pub fn to_dot(g: &SparsityGraph, cover: &CliqueCover) -> String {
    let mut out = String::from("graph extension {\n");
    for v in 0..g.n {
        writeln!(out, "  {v};").unwrap();
    }
    for (a, b) in g.edges() {
        writeln!(out, "  {a} -- {b};").unwrap();
    }
    for &(a, b) in &cover.fill_edges {
        writeln!(out, "  {a} -- {b} [style=dashed];").unwrap();
    }
    out.push_str("}\n");
    out
}

/// One embedded PSD constraint per clique, sharing the entries of `v`.
pub fn decompose_psd(v: &HermitianBlock, cover: &CliqueCover, label: &str) -> Result<Vec<ConeConstraint>, ChordalError> {
    cover
        .cliques
        .iter()
        .enumerate()
        .map(|(k, c)| {
            if let Some(&vertex) = c.iter().find(|&&x| x >= v.side()) {
                return Err(ChordalError::CliqueVertexOutOfRange { clique: k, vertex, side: v.side() });
            }
            let sub = v.principal(c)?;
            Ok(embed_hermitian_psd(&sub, format!("{label}[{k}]"))?)
        })
        .collect()
}
