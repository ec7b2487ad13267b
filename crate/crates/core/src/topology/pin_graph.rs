//! Device-pin graph: one node per device pin, port and control line.
//!
//! A switch contributes the cycle D-G-S-B-D and a capacitor the edge P-N.
//! Each gate is joined to the VCONT nodes of its control word's active bits.
//! Port nets are stars centred on the port node; internal nets are cliques
//! over their terminal pins. The bulk pin sits on the source net.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;

use thiserror::Error;

use super::converter::{Capacitor, ControlWord, Converter, Ports, Switch, N_PHASES};
use crate::util::UnionFind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PortKind {
    Vin = 0,
    Vout = 1,
    Gnd = 2,
}

impl PortKind {
    pub const ALL: [PortKind; 3] = [PortKind::Vin, PortKind::Vout, PortKind::Gnd];

    pub fn name(self) -> &'static str {
        match self {
            PortKind::Vin => "VIN",
            PortKind::Vout => "VOUT",
            PortKind::Gnd => "GND",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SwitchPin {
    Drain = 0,
    Gate = 1,
    Source = 2,
    Bulk = 3,
}

impl SwitchPin {
    pub const ALL: [SwitchPin; 4] =
        [SwitchPin::Drain, SwitchPin::Gate, SwitchPin::Source, SwitchPin::Bulk];

    fn suffix(self) -> &'static str {
        match self {
            SwitchPin::Drain => "D",
            SwitchPin::Gate => "G",
            SwitchPin::Source => "S",
            SwitchPin::Bulk => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CapPin {
    Pos = 0,
    Neg = 1,
}

impl CapPin {
    pub const ALL: [CapPin; 2] = [CapPin::Pos, CapPin::Neg];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PinNode {
    Port(PortKind),
    Vcont(u8),
    Switch(u32, SwitchPin),
    Cap(u32, CapPin),
}

impl PinNode {
    /// Ports and the terminal pins of devices (everything but gates and
    /// control lines) take part in nets.
    pub fn is_net_member(self) -> bool {
        !matches!(self, PinNode::Vcont(_) | PinNode::Switch(_, SwitchPin::Gate))
    }

    /// Stable byte encoding, used by canonical certificates.
    pub fn encode(self, out: &mut Vec<u8>) {
        match self {
            PinNode::Port(p) => out.extend_from_slice(&[0, p as u8, 0, 0, 0, 0]),
            PinNode::Vcont(k) => out.extend_from_slice(&[1, k, 0, 0, 0, 0]),
            PinNode::Switch(id, pin) => {
                out.push(2);
                out.extend_from_slice(&id.to_be_bytes());
                out.push(pin as u8);
            }
            PinNode::Cap(id, pin) => {
                out.push(3);
                out.extend_from_slice(&id.to_be_bytes());
                out.push(pin as u8);
            }
        }
    }
}

impl fmt::Display for PinNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PinNode::Port(p) => f.write_str(p.name()),
            PinNode::Vcont(k) => write!(f, "VCONT{k}"),
            PinNode::Switch(id, pin) => write!(f, "S{id}_{}", pin.suffix()),
            PinNode::Cap(id, CapPin::Pos) => write!(f, "C{id}_P"),
            PinNode::Cap(id, CapPin::Neg) => write!(f, "C{id}_N"),
        }
    }
}

/// Edges internal to a device: the switch pin cycle and the capacitor P-N edge.
pub fn is_intra_device_edge(a: PinNode, b: PinNode) -> bool {
    use SwitchPin::*;
    match (a, b) {
        (PinNode::Switch(i, p), PinNode::Switch(j, q)) if i == j => matches!(
            (p.min(q), p.max(q)),
            (Drain, Gate) | (Gate, Source) | (Source, Bulk) | (Drain, Bulk)
        ),
        (PinNode::Cap(i, p), PinNode::Cap(j, q)) if i == j => p != q,
        _ => false,
    }
}

fn same_device(a: PinNode, b: PinNode) -> bool {
    match (a, b) {
        (PinNode::Switch(i, _), PinNode::Switch(j, _)) | (PinNode::Cap(i, _), PinNode::Cap(j, _)) => {
            i == j
        }
        _ => false,
    }
}

/// Whether the edge joins two pins electrically. The source-bulk edge does,
/// since the bulk always sits on the source net.
fn is_net_edge(a: PinNode, b: PinNode) -> bool {
    if !(a.is_net_member() && b.is_net_member()) {
        return false;
    }
    if let (PinNode::Switch(i, p), PinNode::Switch(j, q)) = (a, b) {
        if i == j {
            return matches!(
                (p.min(q), p.max(q)),
                (SwitchPin::Drain, SwitchPin::Source) | (SwitchPin::Source, SwitchPin::Bulk)
            );
        }
    }
    !is_intra_device_edge(a, b)
}

/// Undirected simple graph over pins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DevicePinGraph {
    nodes: BTreeSet<PinNode>,
    edges: BTreeSet<(PinNode, PinNode)>,
}

impl DevicePinGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: PinNode) {
        self.nodes.insert(node);
    }

    /// Self-loops are ignored; returns whether the edge is new.
    pub fn add_edge(&mut self, a: PinNode, b: PinNode) -> bool {
        if a == b {
            return false;
        }
        self.nodes.insert(a);
        self.nodes.insert(b);
        self.edges.insert((a.min(b), a.max(b)))
    }

    pub fn has_edge(&self, a: PinNode, b: PinNode) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn nodes(&self) -> &BTreeSet<PinNode> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(PinNode, PinNode)> {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> BTreeMap<PinNode, Vec<PinNode>> {
        let mut adj: BTreeMap<PinNode, Vec<PinNode>> =
            self.nodes.iter().map(|&n| (n, Vec::new())).collect();
        for &(a, b) in &self.edges {
            adj.get_mut(&a).unwrap().push(b);
            adj.get_mut(&b).unwrap().push(a);
        }
        adj
    }

    /// True for a non-empty graph with a single component.
    pub fn is_connected(&self) -> bool {
        let nodes: Vec<PinNode> = self.nodes.iter().copied().collect();
        if nodes.is_empty() {
            return false;
        }
        let mut uf = UnionFind::new(nodes.len());
        for &(a, b) in &self.edges {
            let ia = nodes.binary_search(&a).unwrap();
            let ib = nodes.binary_search(&b).unwrap();
            uf.union(ia, ib);
        }
        uf.labels().1 == 1
    }

    pub fn switch_ids(&self) -> BTreeSet<u32> {
        self.nodes
            .iter()
            .filter_map(|n| if let PinNode::Switch(id, _) = n { Some(*id) } else { None })
            .collect()
    }

    pub fn cap_ids(&self) -> BTreeSet<u32> {
        self.nodes
            .iter()
            .filter_map(|n| if let PinNode::Cap(id, _) = n { Some(*id) } else { None })
            .collect()
    }

    /// Applies a node map to every node and edge.
    pub fn map_nodes(&self, f: impl Fn(PinNode) -> PinNode) -> DevicePinGraph {
        let mut g = DevicePinGraph::new();
        for &n in &self.nodes {
            g.add_node(f(n));
        }
        for &(a, b) in &self.edges {
            g.add_edge(f(a), f(b));
        }
        g
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph pins {\n");
        for n in &self.nodes {
            let shape = match n {
                PinNode::Port(_) => "doublecircle",
                PinNode::Vcont(_) => "box",
                _ => "ellipse",
            };
            let _ = writeln!(out, "  \"{n}\" [shape={shape}];");
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "  \"{a}\" -- \"{b}\";");
        }
        out.push_str("}\n");
        out
    }
}

/// Builds the pin graph of a valid converter.
pub fn to_pin_graph(c: &Converter) -> DevicePinGraph {
    use SwitchPin::*;
    let mut g = DevicePinGraph::new();
    let mut nets: BTreeMap<&str, Vec<PinNode>> = BTreeMap::new();
    for s in c.switches() {
        let pin = |p| PinNode::Switch(s.id, p);
        for (x, y) in [(Drain, Gate), (Gate, Source), (Source, Bulk), (Bulk, Drain)] {
            g.add_edge(pin(x), pin(y));
        }
        for v in s.control.to_vconts() {
            g.add_edge(pin(Gate), PinNode::Vcont(v));
        }
        nets.entry(&s.a).or_default().push(pin(Drain));
        nets.entry(&s.b).or_default().extend([pin(Source), pin(Bulk)]);
    }
    for cap in c.capacitors() {
        g.add_edge(PinNode::Cap(cap.id, CapPin::Pos), PinNode::Cap(cap.id, CapPin::Neg));
        nets.entry(&cap.p).or_default().push(PinNode::Cap(cap.id, CapPin::Pos));
        nets.entry(&cap.n).or_default().push(PinNode::Cap(cap.id, CapPin::Neg));
    }
    let ports = c.ports();
    for (net, pins) in nets {
        let port = if net == ports.vin {
            Some(PortKind::Vin)
        } else if net == ports.vout {
            Some(PortKind::Vout)
        } else if net == ports.gnd {
            Some(PortKind::Gnd)
        } else {
            None
        };
        match port {
            Some(p) => {
                for &pin in &pins {
                    g.add_edge(pin, PinNode::Port(p));
                }
            }
            None => {
                for (i, &x) in pins.iter().enumerate() {
                    for &y in &pins[i + 1..] {
                        g.add_edge(x, y);
                    }
                }
            }
        }
    }
    g
}

/// Failure of one of the five syntax tests, reported in test order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntaxError {
    #[error("test 1 (floating pin): {0}")]
    FloatingPin(String),
    #[error("test 2 (incomplete device): {0}")]
    IncompleteDevice(String),
    #[error("test 3 (port connectivity): {0}")]
    PortConflict(String),
    #[error("test 4 (netlist assembly): {0}")]
    NetlistAssembly(String),
    #[error("test 5 (graph conversion): {0}")]
    GraphConversion(String),
}

impl SyntaxError {
    /// 1-based number of the failing test.
    pub fn test_number(&self) -> u8 {
        match self {
            SyntaxError::FloatingPin(_) => 1,
            SyntaxError::IncompleteDevice(_) => 2,
            SyntaxError::PortConflict(_) => 3,
            SyntaxError::NetlistAssembly(_) => 4,
            SyntaxError::GraphConversion(_) => 5,
        }
    }
}

/// Reads a converter back from a pin graph, running the syntax tests in
/// order. Nets are the components of the electrical edges; internal nets are
/// named `n1, n2, ...` as in [`Converter::normalized`].
pub fn from_pin_graph(g: &DevicePinGraph, n_modes: usize) -> Result<Converter, SyntaxError> {
    use SwitchPin::*;
    let adj = g.adjacency();

    for (&node, neigh) in &adj {
        let terminal = matches!(
            node,
            PinNode::Switch(_, Drain | Source) | PinNode::Cap(..)
        );
        if terminal {
            let external = neigh.iter().any(|&m| is_net_edge(node, m) && !same_device(node, m));
            if !external {
                return Err(SyntaxError::FloatingPin(format!("{node} has no net connection")));
            }
        }
    }

    let switch_ids = g.switch_ids();
    let cap_ids = g.cap_ids();
    for &id in &switch_ids {
        for p in SwitchPin::ALL {
            if !g.nodes().contains(&PinNode::Switch(id, p)) {
                return Err(SyntaxError::IncompleteDevice(format!(
                    "switch {id} is missing pin {}",
                    PinNode::Switch(id, p)
                )));
            }
        }
        for (x, y) in [(Drain, Gate), (Gate, Source), (Source, Bulk), (Bulk, Drain)] {
            if !g.has_edge(PinNode::Switch(id, x), PinNode::Switch(id, y)) {
                return Err(SyntaxError::IncompleteDevice(format!(
                    "switch {id} lacks internal edge {}-{}",
                    PinNode::Switch(id, x),
                    PinNode::Switch(id, y)
                )));
            }
        }
    }
    for &id in &cap_ids {
        let (p, n) = (PinNode::Cap(id, CapPin::Pos), PinNode::Cap(id, CapPin::Neg));
        if !g.nodes().contains(&p) || !g.nodes().contains(&n) {
            return Err(SyntaxError::IncompleteDevice(format!("capacitor {id} is missing a pin")));
        }
        if !g.has_edge(p, n) {
            return Err(SyntaxError::IncompleteDevice(format!("capacitor {id} lacks its P-N edge")));
        }
    }

    let members: Vec<PinNode> = g.nodes().iter().copied().filter(|n| n.is_net_member()).collect();
    let index = |n: &PinNode| members.binary_search(n).unwrap();
    let mut uf = UnionFind::new(members.len());
    for &(a, b) in g.edges() {
        if is_net_edge(a, b) {
            uf.union(index(&a), index(&b));
        }
    }
    let mut port_of_root: BTreeMap<usize, PortKind> = BTreeMap::new();
    for p in PortKind::ALL {
        let node = PinNode::Port(p);
        if !g.nodes().contains(&node) {
            return Err(SyntaxError::PortConflict(format!("port {} is absent", p.name())));
        }
        let root = uf.find(index(&node));
        if let Some(other) = port_of_root.insert(root, p) {
            return Err(SyntaxError::PortConflict(format!(
                "ports {} and {} share a net",
                other.name(),
                p.name()
            )));
        }
    }

    let max_vcont = (n_modes * N_PHASES) as u8;
    for &(a, b) in g.edges() {
        for (x, y) in [(a, b), (b, a)] {
            match x {
                PinNode::Vcont(k) => {
                    if !matches!(y, PinNode::Switch(_, Gate)) {
                        return Err(SyntaxError::NetlistAssembly(format!(
                            "control line {x} attaches to non-gate {y}"
                        )));
                    }
                    if k == 0 || k > max_vcont {
                        return Err(SyntaxError::NetlistAssembly(format!(
                            "{x} exceeds the {max_vcont}-bit control word"
                        )));
                    }
                }
                PinNode::Switch(id, Gate) => {
                    let ok = matches!(y, PinNode::Vcont(_))
                        || y == PinNode::Switch(id, Drain)
                        || y == PinNode::Switch(id, Source);
                    if !ok {
                        return Err(SyntaxError::NetlistAssembly(format!(
                            "gate {x} connects to {y}"
                        )));
                    }
                }
                _ => {}
            }
        }
    }

    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    for p in PortKind::ALL {
        names.insert(uf.find(index(&PinNode::Port(p))), p.name().to_string());
    }
    let mut next = 1;
    let mut net_name = |node: PinNode, uf: &mut UnionFind| -> String {
        let root = uf.find(index(&node));
        names
            .entry(root)
            .or_insert_with(|| {
                let name = format!("n{next}");
                next += 1;
                name
            })
            .clone()
    };
    let mut switches = Vec::new();
    for &id in &switch_ids {
        let a = net_name(PinNode::Switch(id, Drain), &mut uf);
        let b = net_name(PinNode::Switch(id, Source), &mut uf);
        let vconts: BTreeSet<u8> = adj[&PinNode::Switch(id, Gate)]
            .iter()
            .filter_map(|n| if let PinNode::Vcont(k) = n { Some(*k) } else { None })
            .collect();
        let control = ControlWord::from_vconts(&vconts, n_modes)
            .map_err(|e| SyntaxError::GraphConversion(e.to_string()))?;
        switches.push(Switch { id, a, b, control });
    }
    let mut capacitors = Vec::new();
    for &id in &cap_ids {
        let p = net_name(PinNode::Cap(id, CapPin::Pos), &mut uf);
        let n = net_name(PinNode::Cap(id, CapPin::Neg), &mut uf);
        capacitors.push(Capacitor { id, p, n });
    }
    Converter::new(Ports::default(), switches, capacitors, n_modes)
        .map_err(|e| SyntaxError::GraphConversion(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::converter::parse_converter;

    pub(crate) const HALVER: &str = r#"{
        "version": 1, "n_modes": 1,
        "ports": {"vin": "VIN", "vout": "VOUT", "gnd": "GND"},
        "switches": [
            {"id": 1, "a": "VIN", "b": "x", "ctrl": "01"},
            {"id": 2, "a": "y", "b": "VOUT", "ctrl": "01"},
            {"id": 3, "a": "x", "b": "VOUT", "ctrl": "10"},
            {"id": 4, "a": "y", "b": "GND", "ctrl": "10"}
        ],
        "capacitors": [{"id": 1, "p": "x", "n": "y"}]
    }"#;

    fn halver() -> Converter {
        parse_converter(HALVER).unwrap()
    }

    #[test]
    fn gate_attaches_to_active_bits() {
        let g = to_pin_graph(&halver());
        let adj = g.adjacency();
        let gate1: Vec<_> = adj[&PinNode::Switch(1, SwitchPin::Gate)]
            .iter()
            .filter(|n| matches!(n, PinNode::Vcont(_)))
            .collect();
        assert_eq!(gate1, vec![&PinNode::Vcont(1)]);
        assert!(g.has_edge(PinNode::Cap(1, CapPin::Pos), PinNode::Switch(1, SwitchPin::Source)));
        assert!(g.is_connected());
    }

    #[test]
    fn capacitor_across_ports() {
        let doc = r#"{"version":1,"n_modes":1,"ports":{"vin":"VIN","vout":"VOUT","gnd":"GND"},
            "switches":[{"id":1,"a":"VIN","b":"VOUT","ctrl":"11"}],
            "capacitors":[{"id":1,"p":"VIN","n":"GND"}]}"#;
        let g = to_pin_graph(&parse_converter(doc).unwrap());
        assert!(g.has_edge(PinNode::Cap(1, CapPin::Pos), PinNode::Port(PortKind::Vin)));
        assert!(g.has_edge(PinNode::Cap(1, CapPin::Neg), PinNode::Port(PortKind::Gnd)));
    }

    #[test]
    fn round_trip_normalizes() {
        let c = halver();
        assert_eq!(from_pin_graph(&to_pin_graph(&c), 1).unwrap(), c.normalized());
    }

    #[test]
    fn missing_source_pin_is_incomplete() {
        let g = to_pin_graph(&halver());
        let cut = g.map_nodes(|n| n);
        let mut h = DevicePinGraph::new();
        for &(a, b) in cut.edges() {
            if a != PinNode::Switch(3, SwitchPin::Source) && b != PinNode::Switch(3, SwitchPin::Source) {
                h.add_edge(a, b);
            }
        }
        match from_pin_graph(&h, 1) {
            Err(e @ SyntaxError::IncompleteDevice(_)) => assert_eq!(e.test_number(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pin_on_two_ports_conflicts() {
        let mut g = to_pin_graph(&halver());
        g.add_edge(PinNode::Switch(1, SwitchPin::Drain), PinNode::Port(PortKind::Gnd));
        assert!(matches!(from_pin_graph(&g, 1), Err(SyntaxError::PortConflict(_))));
    }

    #[test]
    fn dangling_drain_floats() {
        let mut g = DevicePinGraph::new();
        let s = |p| PinNode::Switch(1, p);
        use SwitchPin::*;
        for (x, y) in [(Drain, Gate), (Gate, Source), (Source, Bulk), (Bulk, Drain)] {
            g.add_edge(s(x), s(y));
        }
        g.add_edge(s(Source), PinNode::Port(PortKind::Vin));
        assert!(matches!(from_pin_graph(&g, 1), Err(SyntaxError::FloatingPin(_))));
    }

    #[test]
    fn control_line_on_drain_is_assembly_error() {
        let mut g = to_pin_graph(&halver());
        g.add_edge(PinNode::Switch(2, SwitchPin::Drain), PinNode::Vcont(1));
        assert!(matches!(from_pin_graph(&g, 1), Err(SyntaxError::NetlistAssembly(_))));
        let mut g = to_pin_graph(&halver());
        g.add_edge(PinNode::Switch(2, SwitchPin::Gate), PinNode::Vcont(3));
        assert!(matches!(from_pin_graph(&g, 1), Err(SyntaxError::NetlistAssembly(_))));
    }

    #[test]
    fn shorted_capacitor_fails_conversion() {
        let mut g = to_pin_graph(&halver());
        g.add_edge(PinNode::Cap(1, CapPin::Pos), PinNode::Switch(2, SwitchPin::Drain));
        assert!(matches!(from_pin_graph(&g, 1), Err(SyntaxError::GraphConversion(_))));
    }

    #[test]
    fn dot_lists_every_edge() {
        let g = to_pin_graph(&halver());
        let dot = g.to_dot();
        assert_eq!(dot.matches(" -- ").count(), g.n_edges());
        assert!(dot.contains("\"VCONT1\" -- \"S1_G\""));
    }
}
