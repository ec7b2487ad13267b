//! Per-mode, per-phase branch networks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::topology::{Converter, Phase};
use crate::util::UnionFind;

/// Switch states of one mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeView {
    pub mode: usize,
    /// `on[phase][switch position]`.
    pub on: [Vec<bool>; 2],
}

impl ModeView {
    pub fn is_on(&self, switch: usize, phase: Phase) -> bool {
        self.on[phase.index()][switch]
    }
}

pub fn decouple_modes(c: &Converter) -> Vec<ModeView> {
    (0..c.n_modes())
        .map(|m| ModeView {
            mode: m,
            on: Phase::BOTH
                .map(|ph| c.switches().iter().map(|s| s.control.is_on(m, ph)).collect()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Source,
    Capacitor(u32),
    Output,
    Switch { id: u32, closed: bool },
}

/// Charge and voltage are measured from `tail` to `head`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch {
    pub kind: BranchKind,
    pub tail: usize,
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseNetwork {
    pub phase: Phase,
    /// Member nets of each node.
    pub nodes: Vec<Vec<String>>,
    /// Source, capacitors by id, output, then (switch-inclusive only) switches by id.
    pub branches: Vec<Branch>,
}

impl PhaseNetwork {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn endpoints(&self) -> Vec<(usize, usize)> {
        self.branches.iter().map(|b| (b.tail, b.head)).collect()
    }

    pub fn to_dot(&self, title: &str) -> String {
        let mut out = format!("digraph \"{title}\" {{\n");
        for (i, nets) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "  n{i} [label=\"{}\"];", nets.join("+"));
        }
        for b in &self.branches {
            let (label, style) = match b.kind {
                BranchKind::Source => ("Vin".to_string(), "bold"),
                BranchKind::Capacitor(id) => (format!("C{id}"), "solid"),
                BranchKind::Output => ("Vout".to_string(), "bold"),
                BranchKind::Switch { id, closed: true } => (format!("S{id}"), "solid"),
                BranchKind::Switch { id, closed: false } => (format!("S{id}"), "dashed"),
            };
            let _ = writeln!(out, "  n{} -> n{} [label=\"{label}\", style={style}];", b.tail, b.head);
        }
        out.push_str("}\n");
        out
    }
}

fn net_indices(c: &Converter) -> (Vec<String>, BTreeMap<String, usize>) {
    let nets = c.nets();
    let index = nets.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
    (nets, index)
}

fn fixed_branches(c: &Converter, node_of: impl Fn(&str) -> usize) -> Vec<Branch> {
    let ports = c.ports();
    let mut branches =
        vec![Branch { kind: BranchKind::Source, tail: node_of(&ports.vin), head: node_of(&ports.gnd) }];
    for cap in c.capacitors() {
        branches.push(Branch {
            kind: BranchKind::Capacitor(cap.id),
            tail: node_of(&cap.p),
            head: node_of(&cap.n),
        });
    }
    branches.push(Branch { kind: BranchKind::Output, tail: node_of(&ports.vout), head: node_of(&ports.gnd) });
    branches
}

/// Nets joined by ON switches become one node; OFF switches vanish.
pub fn contracted_phase_graph(c: &Converter, v: &ModeView, phase: Phase) -> PhaseNetwork {
    let (nets, index) = net_indices(c);
    let mut uf = UnionFind::new(nets.len());
    for (i, s) in c.switches().iter().enumerate() {
        if v.is_on(i, phase) {
            uf.union(index[&s.a], index[&s.b]);
        }
    }
    let (labels, count) = uf.labels();
    let mut nodes = vec![Vec::new(); count];
    for (i, net) in nets.iter().enumerate() {
        nodes[labels[i]].push(net.clone());
    }
    let branches = fixed_branches(c, |n| labels[index[n]]);
    PhaseNetwork { phase, nodes, branches }
}

/// Every net is a node; every switch is a branch flagged closed or open.
pub fn switch_inclusive_phase_graph(c: &Converter, v: &ModeView, phase: Phase) -> PhaseNetwork {
    let (nets, index) = net_indices(c);
    let mut branches = fixed_branches(c, |n| index[n]);
    for (i, s) in c.switches().iter().enumerate() {
        branches.push(Branch {
            kind: BranchKind::Switch { id: s.id, closed: v.is_on(i, phase) },
            tail: index[&s.a],
            head: index[&s.b],
        });
    }
    PhaseNetwork { phase, nodes: nets.into_iter().map(|n| vec![n]).collect(), branches }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connectivity {
    pub mode: usize,
    pub phase: Phase,
    /// Source, output and every capacitor share one component.
    pub connected: bool,
    pub components: usize,
}

/// Diagnostic per (mode, phase) over the contracted graphs.
pub fn connectivity_check(c: &Converter) -> Vec<Connectivity> {
    let mut out = Vec::new();
    for v in decouple_modes(c) {
        for phase in Phase::BOTH {
            let p = contracted_phase_graph(c, &v, phase);
            let mut uf = UnionFind::new(p.n_nodes());
            for b in &p.branches {
                uf.union(b.tail, b.head);
            }
            let root = uf.find(p.branches[0].tail);
            let connected = p.branches.iter().all(|b| uf.find(b.tail) == root);
            let components = uf.labels().1;
            out.push(Connectivity { mode: v.mode, phase, connected, components });
        }
    }
    out
}
