//! Spanning forests, fundamental loop and cutset matrices.
//!
//! Branch `j` runs from `tail` to `head`; its voltage is `u_tail - u_head`
//! and its charge is counted flowing through it from tail to head.

use std::collections::VecDeque;

use num_bigint::BigInt;

use super::AnalysisError;
use crate::util::UnionFind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningForest {
    pub twigs: Vec<usize>,
    pub links: Vec<usize>,
    pub components: usize,
}

/// Kruskal over branches in the given priority order (earlier wins a twig slot).
pub fn spanning_forest_ordered(
    n_nodes: usize,
    endpoints: &[(usize, usize)],
    order: &[usize],
) -> SpanningForest {
    let mut uf = UnionFind::new(n_nodes);
    let mut twigs = Vec::new();
    let mut links = Vec::new();
    for &j in order {
        let (t, h) = endpoints[j];
        if uf.union(t, h) {
            twigs.push(j);
        } else {
            links.push(j);
        }
    }
    twigs.sort_unstable();
    links.sort_unstable();
    let components = uf.labels().1;
    SpanningForest { twigs, links, components }
}

pub fn spanning_forest(n_nodes: usize, endpoints: &[(usize, usize)]) -> SpanningForest {
    let order: Vec<usize> = (0..endpoints.len()).collect();
    spanning_forest_ordered(n_nodes, endpoints, &order)
}

/// Spanning tree of a connected graph.
pub fn spanning_tree(
    n_nodes: usize,
    endpoints: &[(usize, usize)],
) -> Result<SpanningForest, AnalysisError> {
    let f = spanning_forest(n_nodes, endpoints);
    if f.components != 1 {
        return Err(AnalysisError::Disconnected);
    }
    Ok(f)
}

/// Twig path from `from` to `to`, as (branch, traversed tail-to-head).
fn tree_path(
    n_nodes: usize,
    endpoints: &[(usize, usize)],
    twigs: &[usize],
    from: usize,
    to: usize,
) -> Vec<(usize, bool)> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
    for &j in twigs {
        let (t, h) = endpoints[j];
        adj[t].push((h, j));
        adj[h].push((t, j));
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n_nodes];
    let mut seen = vec![false; n_nodes];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            break;
        }
        for &(w, j) in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some((v, j));
                queue.push_back(w);
            }
        }
    }
    let mut path = Vec::new();
    let mut v = to;
    while v != from {
        let (u, j) = parent[v].expect("link endpoints share a tree");
        path.push((j, endpoints[j] == (u, v)));
        v = u;
    }
    path.reverse();
    path
}

/// One KVL row per link: the link at +1, twigs signed by traversal direction
/// around the loop oriented by the link.
pub fn loop_matrix(
    n_nodes: usize,
    endpoints: &[(usize, usize)],
    forest: &SpanningForest,
) -> Vec<Vec<i8>> {
    let mut rows = Vec::with_capacity(forest.links.len());
    for &l in &forest.links {
        let mut row = vec![0i8; endpoints.len()];
        row[l] = 1;
        let (t, h) = endpoints[l];
        for (j, forward) in tree_path(n_nodes, endpoints, &forest.twigs, h, t) {
            row[j] += if forward { 1 } else { -1 };
        }
        rows.push(row);
    }
    rows
}

/// One KCL row per twig: the twig at +1, links at `-B[link][twig]`.
pub fn cutset_matrix(forest: &SpanningForest, b: &[Vec<i8>], n_branches: usize) -> Vec<Vec<i8>> {
    forest
        .twigs
        .iter()
        .map(|&t| {
            let mut row = vec![0i8; n_branches];
            row[t] = 1;
            for (k, &l) in forest.links.iter().enumerate() {
                row[l] = -b[k][t];
            }
            row
        })
        .collect()
}

/// Stacked loop matrices over branches `[source, caps.., output]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSystem {
    pub b1: Vec<Vec<i8>>,
    pub b2: Vec<Vec<i8>>,
    pub n_caps: usize,
}

impl LoopSystem {
    pub fn stacked(&self) -> Vec<Vec<i8>> {
        self.b1.iter().chain(&self.b2).cloned().collect()
    }

    pub fn b_in(&self) -> Vec<i8> {
        self.stacked().iter().map(|r| r[0]).collect()
    }

    /// Columns `[caps.., output]`.
    pub fn b_c(&self) -> Vec<Vec<i8>> {
        self.stacked().iter().map(|r| r[1..].to_vec()).collect()
    }
}

pub fn stacked_loop_system(
    p1: (usize, &[(usize, usize)]),
    p2: (usize, &[(usize, usize)]),
) -> LoopSystem {
    let n_caps = p1.1.len() - 2;
    let f1 = spanning_forest(p1.0, p1.1);
    let f2 = spanning_forest(p2.0, p2.1);
    LoopSystem { b1: loop_matrix(p1.0, p1.1, &f1), b2: loop_matrix(p2.0, p2.1, &f2), n_caps }
}

/// Per-phase cutsets and the transformed system over
/// `[q_in^1, q_in^2, a_c.., a_out^1]`, with the capacitor charge of phase 2
/// replaced by `-a_c` and the output charge of phase 2 by `1 - a_out^1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutsetSystem {
    pub q1: Vec<Vec<i8>>,
    pub q2: Vec<Vec<i8>>,
    pub n_caps: usize,
    pub q_c: Vec<Vec<i8>>,
    /// Coefficient of the total output charge, moved to the right-hand side.
    pub q_out: Vec<i8>,
}

impl CutsetSystem {
    pub fn from_phase_cutsets(q1: Vec<Vec<i8>>, q2: Vec<Vec<i8>>, n_caps: usize) -> Self {
        let out = n_caps + 1;
        let width = n_caps + 3;
        let mut q_c = Vec::with_capacity(q1.len() + q2.len());
        let mut q_out = Vec::with_capacity(q1.len() + q2.len());
        for r in &q1 {
            let mut row = vec![0i8; width];
            row[0] = r[0];
            row[2..2 + n_caps].copy_from_slice(&r[1..=n_caps]);
            row[width - 1] = r[out];
            q_c.push(row);
            q_out.push(0);
        }
        for r in &q2 {
            let mut row = vec![0i8; width];
            row[1] = r[0];
            for k in 0..n_caps {
                row[2 + k] = -r[1 + k];
            }
            row[width - 1] = -r[out];
            q_c.push(row);
            q_out.push(r[out]);
        }
        Self { q1, q2, n_caps, q_c, q_out }
    }
}

pub fn cutset_system(
    p1: (usize, &[(usize, usize)]),
    p2: (usize, &[(usize, usize)]),
) -> CutsetSystem {
    let n_caps = p1.1.len() - 2;
    let phase = |(n, e): (usize, &[(usize, usize)])| {
        let f = spanning_forest(n, e);
        let b = loop_matrix(n, e, &f);
        cutset_matrix(&f, &b, e.len())
    };
    CutsetSystem::from_phase_cutsets(phase(p1), phase(p2), n_caps)
}

pub fn to_big(rows: &[Vec<i8>]) -> Vec<Vec<BigInt>> {
    rows.iter().map(|r| r.iter().map(|&x| BigInt::from(x)).collect()).collect()
}
