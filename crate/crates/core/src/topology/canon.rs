//! Canonical forms of pin graphs under device relabeling.
//!
//! Ports and control lines are fixed points; switches may be permuted among
//! switches and capacitors among capacitors. The form is the smallest
//! relabeled edge list over all labelings reachable by colour refinement
//! plus individualization, with automorphism pruning.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use sha2::{Digest, Sha256};

use super::pin_graph::{DevicePinGraph, PinNode};
use crate::util::UnionFind;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalForm {
    bytes: Vec<u8>,
}

impl CanonicalForm {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self { bytes }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(&self.bytes).into()
    }

    pub fn hex(&self) -> String {
        hex::encode(self.hash())
    }
}

impl fmt::Display for CanonicalForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Class {
    Switch,
    Cap,
}

struct Prepared {
    nodes: Vec<PinNode>,
    adj: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    /// (class, original id, pin node indices with role) per device.
    devices: Vec<(Class, u32, Vec<(u8, usize)>)>,
    /// Device index of each node, if any.
    owner: Vec<Option<usize>>,
}

impl Prepared {
    fn new(g: &DevicePinGraph) -> Self {
        let nodes: Vec<PinNode> = g.nodes().iter().copied().collect();
        let idx = |n: &PinNode| nodes.binary_search(n).unwrap();
        let mut adj = vec![Vec::new(); nodes.len()];
        let mut edges = Vec::with_capacity(g.n_edges());
        for (a, b) in g.edges() {
            let (ia, ib) = (idx(a), idx(b));
            adj[ia].push(ib);
            adj[ib].push(ia);
            edges.push((ia, ib));
        }
        let mut by_device: BTreeMap<(Class, u32), Vec<(u8, usize)>> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            match *n {
                PinNode::Switch(id, p) => by_device.entry((Class::Switch, id)).or_default().push((p as u8, i)),
                PinNode::Cap(id, p) => by_device.entry((Class::Cap, id)).or_default().push((p as u8, i)),
                _ => {}
            }
        }
        let devices: Vec<_> = by_device.into_iter().map(|((c, id), pins)| (c, id, pins)).collect();
        let mut owner = vec![None; nodes.len()];
        for (d, (_, _, pins)) in devices.iter().enumerate() {
            for &(_, i) in pins {
                owner[i] = Some(d);
            }
        }
        Self { nodes, adj, edges, devices, owner }
    }

    fn initial_colors(&self) -> Vec<u32> {
        let keys: Vec<(u8, u8, u8)> = self
            .nodes
            .iter()
            .map(|n| match *n {
                PinNode::Port(p) => (0, p as u8, 0),
                PinNode::Vcont(k) => (1, k, 0),
                PinNode::Switch(_, p) => (2, p as u8, 0),
                PinNode::Cap(_, p) => (3, p as u8, 0),
            })
            .collect();
        rank(&keys)
    }

    /// Colour refinement to the coarsest equitable partition finer than `colors`.
    fn refine(&self, colors: &mut Vec<u32>) {
        let mut n_colors = count_distinct(colors);
        loop {
            let sigs: Vec<(u32, Vec<u32>)> = (0..self.nodes.len())
                .map(|v| {
                    let mut nb: Vec<u32> = self.adj[v].iter().map(|&u| colors[u]).collect();
                    nb.sort_unstable();
                    (colors[v], nb)
                })
                .collect();
            let next = rank(&sigs);
            let n_next = count_distinct(&next);
            *colors = next;
            if n_next == n_colors {
                return;
            }
            n_colors = n_next;
        }
    }

    fn device_signature(&self, colors: &[u32], d: usize) -> (Class, Vec<(u8, u32)>) {
        let (class, _, pins) = &self.devices[d];
        (*class, pins.iter().map(|&(r, i)| (r, colors[i])).collect())
    }

    /// Device cells in canonical order.
    fn cells(&self, colors: &[u32]) -> Vec<Vec<usize>> {
        let mut groups: BTreeMap<(Class, Vec<(u8, u32)>), Vec<usize>> = BTreeMap::new();
        for d in 0..self.devices.len() {
            groups.entry(self.device_signature(colors, d)).or_default().push(d);
        }
        groups.into_values().collect()
    }

    fn individualize(&self, colors: &[u32], d: usize) -> Vec<u32> {
        let top = colors.iter().copied().max().unwrap_or(0) + 1;
        let mut out = colors.to_vec();
        for &(role, i) in &self.devices[d].2 {
            out[i] = top + role as u32;
        }
        out
    }

    /// Device position per class, from a discrete cell order.
    fn labeling(&self, cells: &[Vec<usize>]) -> Vec<u32> {
        let mut pos = vec![0u32; self.devices.len()];
        let mut next = [0u32; 2];
        for cell in cells {
            let d = cell[0];
            let c = self.devices[d].0 as usize;
            next[c] += 1;
            pos[d] = next[c];
        }
        pos
    }

    fn relabel(&self, pos: &[u32], i: usize) -> PinNode {
        match (self.nodes[i], self.owner[i]) {
            (PinNode::Switch(_, p), Some(d)) => PinNode::Switch(pos[d], p),
            (PinNode::Cap(_, p), Some(d)) => PinNode::Cap(pos[d], p),
            (n, _) => n,
        }
    }

    fn certificate(&self, pos: &[u32]) -> Vec<u8> {
        let mut nodes: Vec<PinNode> = (0..self.nodes.len()).map(|i| self.relabel(pos, i)).collect();
        nodes.sort_unstable();
        let mut edges: Vec<(PinNode, PinNode)> = self
            .edges
            .iter()
            .map(|&(a, b)| {
                let (x, y) = (self.relabel(pos, a), self.relabel(pos, b));
                (x.min(y), x.max(y))
            })
            .collect();
        edges.sort_unstable();
        let mut out = Vec::with_capacity(8 + 6 * nodes.len() + 12 * edges.len());
        out.extend_from_slice(&(nodes.len() as u32).to_be_bytes());
        for n in nodes {
            n.encode(&mut out);
        }
        out.extend_from_slice(&(edges.len() as u32).to_be_bytes());
        for (a, b) in edges {
            a.encode(&mut out);
            b.encode(&mut out);
        }
        out
    }

    /// Whether swapping two devices of a class maps the edge set onto itself.
    fn is_twin_pair(&self, d: usize, e: usize) -> bool {
        let swap = |i: usize| -> PinNode {
            match self.owner[i] {
                Some(o) if o == d || o == e => {
                    let target = if o == d { self.devices[e].1 } else { self.devices[d].1 };
                    match self.nodes[i] {
                        PinNode::Switch(_, p) => PinNode::Switch(target, p),
                        PinNode::Cap(_, p) => PinNode::Cap(target, p),
                        n => n,
                    }
                }
                _ => self.nodes[i],
            }
        };
        let incident = |x: usize| -> Vec<(PinNode, PinNode)> {
            let mut v: Vec<(PinNode, PinNode)> = self.devices[x]
                .2
                .iter()
                .flat_map(|&(_, i)| self.adj[i].iter().map(move |&j| (i, j)))
                .map(|(i, j)| {
                    let (a, b) = (self.nodes[i], self.nodes[j]);
                    (a.min(b), a.max(b))
                })
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let mut before = incident(d);
        before.extend(incident(e));
        before.sort_unstable();
        before.dedup();
        let mut after: Vec<(PinNode, PinNode)> = self.devices[d]
            .2
            .iter()
            .chain(self.devices[e].2.iter())
            .flat_map(|&(_, i)| self.adj[i].iter().map(move |&j| (i, j)))
            .map(|(i, j)| {
                let (a, b) = (swap(i), swap(j));
                (a.min(b), a.max(b))
            })
            .collect();
        after.sort_unstable();
        after.dedup();
        before == after
    }
}

fn rank<T: Ord + Clone>(keys: &[T]) -> Vec<u32> {
    let mut sorted: Vec<T> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter().map(|k| sorted.binary_search(k).unwrap() as u32).collect()
}

fn count_distinct(colors: &[u32]) -> usize {
    let mut c = colors.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

struct Search<'a> {
    g: &'a Prepared,
    best: Option<Vec<u8>>,
    seen: HashMap<Vec<u8>, Vec<u32>>,
    generators: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn run(&mut self, mut colors: Vec<u32>, prefix: &mut Vec<usize>) {
        self.g.refine(&mut colors);
        let cells = self.g.cells(&colors);
        let Some(target) = cells.iter().find(|c| c.len() > 1).cloned() else {
            let pos = self.g.labeling(&cells);
            let cert = self.g.certificate(&pos);
            self.record_leaf(cert, pos);
            return;
        };
        let mut explored: Vec<usize> = Vec::new();
        for &d in &target {
            if !explored.is_empty() {
                let mut uf = self.stabilizer_orbits(prefix);
                let root = uf.find(d);
                if explored.iter().any(|&e| uf.find(e) == root) {
                    continue;
                }
            }
            let child = self.g.individualize(&colors, d);
            prefix.push(d);
            self.run(child, prefix);
            prefix.pop();
            explored.push(d);
        }
    }

    /// Orbits of the group generated by known automorphisms fixing `prefix`.
    fn stabilizer_orbits(&self, prefix: &[usize]) -> UnionFind {
        let mut uf = UnionFind::new(self.g.devices.len());
        for gen in &self.generators {
            if prefix.iter().all(|&p| gen[p] == p) {
                for (d, &img) in gen.iter().enumerate() {
                    uf.union(d, img);
                }
            }
        }
        uf
    }

    fn record_leaf(&mut self, cert: Vec<u8>, pos: Vec<u32>) {
        if let Some(prev) = self.seen.get(&cert) {
            let n = pos.len();
            let mut inverse: HashMap<(Class, u32), usize> = HashMap::with_capacity(n);
            for (d, &p) in prev.iter().enumerate() {
                inverse.insert((self.g.devices[d].0, p), d);
            }
            let gen: Vec<usize> =
                (0..n).map(|d| inverse[&(self.g.devices[d].0, pos[d])]).collect();
            if gen.iter().enumerate().any(|(d, &x)| d != x) {
                self.generators.push(gen);
            }
        } else {
            if self.best.as_ref().is_none_or(|b| cert < *b) {
                self.best = Some(cert.clone());
            }
            self.seen.insert(cert, pos);
        }
    }
}

pub fn canonical_form(g: &DevicePinGraph) -> CanonicalForm {
    let prepared = Prepared::new(g);
    let mut colors = prepared.initial_colors();
    prepared.refine(&mut colors);

    let mut generators = Vec::new();
    for cell in prepared.cells(&colors) {
        for (i, &d) in cell.iter().enumerate() {
            for &e in &cell[i + 1..] {
                if prepared.is_twin_pair(d, e) {
                    let mut gen: Vec<usize> = (0..prepared.devices.len()).collect();
                    gen.swap(d, e);
                    generators.push(gen);
                }
            }
        }
    }

    let mut search = Search { g: &prepared, best: None, seen: HashMap::new(), generators };
    search.run(colors, &mut Vec::new());
    CanonicalForm { bytes: search.best.expect("search reaches at least one leaf") }
}

pub fn is_isomorphic(a: &DevicePinGraph, b: &DevicePinGraph) -> bool {
    a.n_edges() == b.n_edges()
        && a.nodes().len() == b.nodes().len()
        && canonical_form(a) == canonical_form(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::converter::{parse_converter, Converter};
    use crate::topology::pin_graph::{to_pin_graph, SwitchPin};

    fn halver() -> Converter {
        parse_converter(
            r#"{"version":1,"n_modes":1,"ports":{"vin":"VIN","vout":"VOUT","gnd":"GND"},
            "switches":[{"id":1,"a":"VIN","b":"x","ctrl":"01"},{"id":2,"a":"y","b":"VOUT","ctrl":"01"},
                        {"id":3,"a":"x","b":"VOUT","ctrl":"10"},{"id":4,"a":"y","b":"GND","ctrl":"10"}],
            "capacitors":[{"id":1,"p":"x","n":"y"}]}"#,
        )
        .unwrap()
    }

    fn swap_switches(g: &DevicePinGraph, a: u32, b: u32) -> DevicePinGraph {
        g.map_nodes(|n| match n {
            PinNode::Switch(id, p) if id == a => PinNode::Switch(b, p),
            PinNode::Switch(id, p) if id == b => PinNode::Switch(a, p),
            n => n,
        })
    }

    #[test]
    fn relabeling_is_invisible() {
        let g = to_pin_graph(&halver());
        let h = swap_switches(&g, 1, 2);
        assert_ne!(g, h);
        assert!(is_isomorphic(&g, &h));
    }

    #[test]
    fn control_bit_flip_is_visible() {
        let g = to_pin_graph(&halver());
        let mut h = g.clone();
        h.add_edge(PinNode::Switch(3, SwitchPin::Gate), PinNode::Vcont(1));
        assert!(!is_isomorphic(&g, &h));
    }

    #[test]
    fn parallel_twins_collapse() {
        // Ten identical switches in parallel must not explode the search.
        let mut g = DevicePinGraph::new();
        use crate::topology::pin_graph::PortKind;
        use SwitchPin::*;
        for id in 1..=10 {
            let s = |p| PinNode::Switch(id, p);
            for (x, y) in [(Drain, Gate), (Gate, Source), (Source, Bulk), (Bulk, Drain)] {
                g.add_edge(s(x), s(y));
            }
            g.add_edge(s(Drain), PinNode::Port(PortKind::Vin));
            g.add_edge(s(Source), PinNode::Port(PortKind::Vout));
            g.add_edge(s(Bulk), PinNode::Port(PortKind::Vout));
            g.add_edge(s(Gate), PinNode::Vcont(1));
        }
        let h = swap_switches(&g, 3, 9);
        assert_eq!(canonical_form(&g), canonical_form(&h));
    }

    #[test]
    fn ids_do_not_matter() {
        let g = to_pin_graph(&halver());
        let shifted = g.map_nodes(|n| match n {
            PinNode::Switch(id, p) => PinNode::Switch(id + 10, p),
            n => n,
        });
        assert_eq!(canonical_form(&g), canonical_form(&shifted));
        assert_eq!(canonical_form(&g).hex().len(), 64);
    }
}
