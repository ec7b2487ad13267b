//! Reconfigurable converter netlists and their JSON document format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::TopologyError;

/// Maximum number of modes: one VCONT token per (mode, phase) bit, 16 tokens.
pub const MAX_MODES: usize = 8;
/// Two-phase clocking only.
pub const N_PHASES: usize = 2;
/// Converter document version understood by this crate.
pub const DOCUMENT_VERSION: u32 = 1;

/// Clock phase of a two-phase converter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub const BOTH: [Phase; 2] = [Phase::One, Phase::Two];

    pub fn index(self) -> usize {
        match self {
            Phase::One => 0,
            Phase::Two => 1,
        }
    }

    pub fn other(self) -> Phase {
        match self {
            Phase::One => Phase::Two,
            Phase::Two => Phase::One,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "phi{}", self.index() + 1)
    }
}

/// Per-switch on/off schedule across every (mode, phase) slot.
///
/// Bit `i` (1-based, counted from the right of the printed string) is the
/// state in mode `(i - 1) / 2 + 1`, phase `(i - 1) % 2 + 1`: mode 1 phase 1 is
/// bit 1, mode 1 phase 2 is bit 2, mode 2 phase 1 is bit 3, and so on.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ControlWord {
    bits: Vec<bool>,
}

impl ControlWord {
    pub fn zeros(n_modes: usize) -> Self {
        Self { bits: vec![false; n_modes * N_PHASES] }
    }

    /// Builds a word from bits in index order (bit 1 first).
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Parses the printed form, most significant bit (highest index) first.
    pub fn parse(text: &str) -> Result<Self, TopologyError> {
        let mut bits = Vec::with_capacity(text.len());
        for ch in text.chars().rev() {
            match ch {
                '0' => bits.push(false),
                '1' => bits.push(true),
                other => {
                    return Err(TopologyError::MalformedDocument(format!(
                        "control word `{text}` contains `{other}`"
                    )))
                }
            }
        }
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn n_modes(&self) -> usize {
        self.bits.len() / N_PHASES
    }

    /// 1-based bit position of a (mode, phase) slot; `mode` is 0-based.
    pub fn bit_position(mode: usize, phase: Phase) -> usize {
        mode * N_PHASES + phase.index() + 1
    }

    pub fn is_on(&self, mode: usize, phase: Phase) -> bool {
        self.bits[Self::bit_position(mode, phase) - 1]
    }

    pub fn set(&mut self, mode: usize, phase: Phase, on: bool) {
        self.bits[Self::bit_position(mode, phase) - 1] = on;
    }

    /// Bit at 1-based position.
    pub fn bit(&self, position: usize) -> bool {
        self.bits[position - 1]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// VCONT indices of the active bits.
    pub fn to_vconts(&self) -> BTreeSet<u8> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i + 1) as u8)
            .collect()
    }

    /// Inverse of [`ControlWord::to_vconts`] for a word of `n_modes` modes.
    pub fn from_vconts(vconts: &BTreeSet<u8>, n_modes: usize) -> Result<Self, TopologyError> {
        let mut word = Self::zeros(n_modes);
        for &v in vconts {
            let pos = v as usize;
            if pos == 0 || pos > word.len() {
                return Err(TopologyError::MalformedDocument(format!(
                    "VCONT{v} outside the {}-bit control word",
                    word.len()
                )));
            }
            word.bits[pos - 1] = true;
        }
        Ok(word)
    }
}

impl fmt::Display for ControlWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in self.bits.iter().rev() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Set of active VCONT indices for a control word.
pub fn control_to_vconts(word: &ControlWord) -> BTreeSet<u8> {
    word.to_vconts()
}

/// Reconstructs a control word of `n_modes` modes from its active VCONT indices.
pub fn vconts_to_control(
    vconts: &BTreeSet<u8>,
    n_modes: usize,
) -> Result<ControlWord, TopologyError> {
    ControlWord::from_vconts(vconts, n_modes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Switch {
    pub id: u32,
    /// Drain-side net.
    pub a: String,
    /// Source-side net (bulk is tied here).
    pub b: String,
    pub control: ControlWord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capacitor {
    pub id: u32,
    pub p: String,
    pub n: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ports {
    pub vin: String,
    pub vout: String,
    pub gnd: String,
}

impl Default for Ports {
    fn default() -> Self {
        Self { vin: "VIN".into(), vout: "VOUT".into(), gnd: "GND".into() }
    }
}

/// A reconfigurable two-phase switched-capacitor converter.
///
/// Switches and capacitors are kept sorted by id. Construction through
/// [`Converter::new`] checks every structural invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Converter {
    ports: Ports,
    switches: Vec<Switch>,
    capacitors: Vec<Capacitor>,
    n_modes: usize,
}

/// Net names as they appear on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConverterDocument {
    pub version: u32,
    pub n_modes: usize,
    pub ports: Ports,
    pub switches: Vec<SwitchRecord>,
    pub capacitors: Vec<CapacitorRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchRecord {
    pub id: u32,
    pub a: String,
    pub b: String,
    pub ctrl: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacitorRecord {
    pub id: u32,
    pub p: String,
    pub n: String,
}

impl Converter {
    pub fn new(
        ports: Ports,
        mut switches: Vec<Switch>,
        mut capacitors: Vec<Capacitor>,
        n_modes: usize,
    ) -> Result<Self, TopologyError> {
        if n_modes == 0 || n_modes > MAX_MODES {
            return Err(TopologyError::MalformedDocument(format!(
                "n_modes must be in 1..={MAX_MODES}, got {n_modes}"
            )));
        }
        switches.sort_by_key(|s| s.id);
        capacitors.sort_by_key(|c| c.id);
        for pair in switches.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(TopologyError::DuplicateId { kind: "switch", id: pair[0].id });
            }
        }
        for pair in capacitors.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(TopologyError::DuplicateId { kind: "capacitor", id: pair[0].id });
            }
        }
        if switches.iter().any(|s| s.id == 0) || capacitors.iter().any(|c| c.id == 0) {
            return Err(TopologyError::MalformedDocument("device ids start at 1".into()));
        }
        for s in &switches {
            if s.control.len() != n_modes * N_PHASES {
                return Err(TopologyError::ControlLengthMismatch {
                    switch: s.id,
                    expected: n_modes * N_PHASES,
                    found: s.control.len(),
                });
            }
        }
        for (name, net) in [("vin", &ports.vin), ("vout", &ports.vout), ("gnd", &ports.gnd)] {
            if net.is_empty() {
                return Err(TopologyError::MissingPort(name.into()));
            }
        }
        if ports.vin == ports.vout || ports.vin == ports.gnd || ports.vout == ports.gnd {
            return Err(TopologyError::MalformedDocument("port nets must be distinct".into()));
        }
        if switches.is_empty() && capacitors.is_empty() {
            return Err(TopologyError::MalformedDocument("converter has no devices".into()));
        }
        for s in &switches {
            if s.a == s.b {
                return Err(TopologyError::MalformedDocument(format!(
                    "switch {} has both terminals on net `{}`",
                    s.id, s.a
                )));
            }
        }
        for c in &capacitors {
            if c.p == c.n {
                return Err(TopologyError::MalformedDocument(format!(
                    "capacitor {} has both terminals on net `{}`",
                    c.id, c.p
                )));
            }
        }

        let converter = Self { ports, switches, capacitors, n_modes };
        converter.check_nets()?;
        Ok(converter)
    }

    /// Port presence, dangling nets and reachability from the ports.
    fn check_nets(&self) -> Result<(), TopologyError> {
        let mut terminals: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &self.switches {
            *terminals.entry(&s.a).or_default() += 1;
            *terminals.entry(&s.b).or_default() += 1;
        }
        for c in &self.capacitors {
            *terminals.entry(&c.p).or_default() += 1;
            *terminals.entry(&c.n).or_default() += 1;
        }
        for (name, net) in self.port_nets() {
            if !terminals.contains_key(net) {
                return Err(TopologyError::MissingPort(format!(
                    "{name} net `{net}` is not connected to any device"
                )));
            }
        }
        for (net, &count) in &terminals {
            if count < 2 && !self.is_port_net(net) {
                return Err(TopologyError::MalformedDocument(format!(
                    "net `{net}` touches a single device terminal"
                )));
            }
        }

        // Devices are linked through shared nets and through shared control
        // bits (gate-VCONT edges in the pin graph).
        let nets: Vec<&str> = terminals.keys().copied().collect();
        let net_index: BTreeMap<&str, usize> =
            nets.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let n_vcont = self.n_modes * N_PHASES;
        let mut uf = crate::util::UnionFind::new(nets.len() + n_vcont);
        for s in &self.switches {
            let a = net_index[s.a.as_str()];
            let b = net_index[s.b.as_str()];
            uf.union(a, b);
            for v in s.control.to_vconts() {
                uf.union(a, nets.len() + v as usize - 1);
            }
        }
        for c in &self.capacitors {
            uf.union(net_index[c.p.as_str()], net_index[c.n.as_str()]);
        }
        let root = uf.find(net_index[self.ports.vin.as_str()]);
        for (_, net) in self.port_nets() {
            if uf.find(net_index[net]) != root {
                return Err(TopologyError::MalformedDocument(format!(
                    "port net `{net}` is not connected to the input"
                )));
            }
        }
        for (i, net) in nets.iter().enumerate() {
            if uf.find(i) != root {
                return Err(TopologyError::MalformedDocument(format!(
                    "net `{net}` is unreachable from the ports"
                )));
            }
        }
        Ok(())
    }

    fn port_nets(&self) -> [(&'static str, &str); 3] {
        [("vin", &self.ports.vin), ("vout", &self.ports.vout), ("gnd", &self.ports.gnd)]
    }

    pub fn is_port_net(&self, net: &str) -> bool {
        net == self.ports.vin || net == self.ports.vout || net == self.ports.gnd
    }

    pub fn ports(&self) -> &Ports {
        &self.ports
    }

    pub fn switches(&self) -> &[Switch] {
        &self.switches
    }

    pub fn capacitors(&self) -> &[Capacitor] {
        &self.capacitors
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_phases(&self) -> usize {
        N_PHASES
    }

    pub fn n_caps(&self) -> usize {
        self.capacitors.len()
    }

    /// All nets, ports first (VIN, VOUT, GND), then internal nets sorted by name.
    pub fn nets(&self) -> Vec<String> {
        let mut internal = BTreeSet::new();
        for s in &self.switches {
            internal.insert(s.a.clone());
            internal.insert(s.b.clone());
        }
        for c in &self.capacitors {
            internal.insert(c.p.clone());
            internal.insert(c.n.clone());
        }
        let mut nets = vec![self.ports.vin.clone(), self.ports.vout.clone(), self.ports.gnd.clone()];
        nets.extend(internal.into_iter().filter(|n| !self.is_port_net(n)));
        nets
    }

    /// Renames ports to VIN/VOUT/GND and internal nets to `n1, n2, ...` in
    /// order of first appearance (switches by id: a then b; then capacitors).
    pub fn normalized(&self) -> Converter {
        let mut names: BTreeMap<String, String> = BTreeMap::new();
        names.insert(self.ports.vin.clone(), "VIN".into());
        names.insert(self.ports.vout.clone(), "VOUT".into());
        names.insert(self.ports.gnd.clone(), "GND".into());
        let mut next = 1;
        let mut visit = |net: &str, names: &mut BTreeMap<String, String>| {
            if !names.contains_key(net) {
                names.insert(net.to_string(), format!("n{next}"));
                next += 1;
            }
        };
        for s in &self.switches {
            visit(&s.a, &mut names);
            visit(&s.b, &mut names);
        }
        for c in &self.capacitors {
            visit(&c.p, &mut names);
            visit(&c.n, &mut names);
        }
        Converter {
            ports: Ports::default(),
            switches: self
                .switches
                .iter()
                .map(|s| Switch {
                    id: s.id,
                    a: names[&s.a].clone(),
                    b: names[&s.b].clone(),
                    control: s.control.clone(),
                })
                .collect(),
            capacitors: self
                .capacitors
                .iter()
                .map(|c| Capacitor { id: c.id, p: names[&c.p].clone(), n: names[&c.n].clone() })
                .collect(),
            n_modes: self.n_modes,
        }
    }

    pub fn to_document(&self) -> ConverterDocument {
        ConverterDocument {
            version: DOCUMENT_VERSION,
            n_modes: self.n_modes,
            ports: self.ports.clone(),
            switches: self
                .switches
                .iter()
                .map(|s| SwitchRecord {
                    id: s.id,
                    a: s.a.clone(),
                    b: s.b.clone(),
                    ctrl: s.control.to_string(),
                })
                .collect(),
            capacitors: self
                .capacitors
                .iter()
                .map(|c| CapacitorRecord { id: c.id, p: c.p.clone(), n: c.n.clone() })
                .collect(),
        }
    }

    pub fn from_document(doc: ConverterDocument) -> Result<Self, TopologyError> {
        if doc.version != DOCUMENT_VERSION {
            return Err(TopologyError::MalformedDocument(format!(
                "unsupported document version {}",
                doc.version
            )));
        }
        let mut switches = Vec::with_capacity(doc.switches.len());
        for s in doc.switches {
            let control = ControlWord::parse(&s.ctrl)?;
            switches.push(Switch { id: s.id, a: s.a, b: s.b, control });
        }
        let capacitors =
            doc.capacitors.into_iter().map(|c| Capacitor { id: c.id, p: c.p, n: c.n }).collect();
        Converter::new(doc.ports, switches, capacitors, doc.n_modes)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serializes")
    }
}

/// Parses a converter JSON document and checks every invariant.
pub fn parse_converter(text: &str) -> Result<Converter, TopologyError> {
    let doc: ConverterDocument = serde_json::from_str(text)
        .map_err(|e| TopologyError::MalformedDocument(e.to_string()))?;
    Converter::from_document(doc)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_SWITCH: &str = r#"{
        "version": 1, "n_modes": 8,
        "ports": {"vin": "VIN", "vout": "VOUT", "gnd": "GND"},
        "switches": [{"id": 1, "a": "VIN", "b": "VOUT", "ctrl": "0000000000000001"}],
        "capacitors": [{"id": 1, "p": "VOUT", "n": "GND"}]
    }"#;

    #[test]
    fn sixteen_bit_control_means_eight_modes() {
        let c = parse_converter(ONE_SWITCH).unwrap();
        assert_eq!(c.n_modes(), 8);
        assert_eq!(c.switches()[0].control.len(), 16);
        assert!(c.switches()[0].control.is_on(0, Phase::One));
        assert!(!c.switches()[0].control.is_on(0, Phase::Two));
    }

    #[test]
    fn fifteen_bit_control_is_rejected() {
        let text = ONE_SWITCH.replace("0000000000000001", "000000000000001");
        assert!(matches!(
            parse_converter(&text),
            Err(TopologyError::ControlLengthMismatch { switch: 1, expected: 16, found: 15 })
        ));
    }

    #[test]
    fn duplicate_ids_and_missing_ports() {
        let dup = r#"{"version":1,"n_modes":1,"ports":{"vin":"VIN","vout":"VOUT","gnd":"GND"},
            "switches":[{"id":1,"a":"VIN","b":"VOUT","ctrl":"01"},{"id":1,"a":"VOUT","b":"GND","ctrl":"10"}],
            "capacitors":[]}"#;
        assert!(matches!(parse_converter(dup), Err(TopologyError::DuplicateId { .. })));

        let floating_gnd = r#"{"version":1,"n_modes":1,"ports":{"vin":"VIN","vout":"VOUT","gnd":"GND"},
            "switches":[{"id":1,"a":"VIN","b":"VOUT","ctrl":"01"}],"capacitors":[]}"#;
        assert!(matches!(parse_converter(floating_gnd), Err(TopologyError::MissingPort(_))));

        let empty_port = ONE_SWITCH.replace(r#""gnd": "GND""#, r#""gnd": """#);
        assert!(matches!(parse_converter(&empty_port), Err(TopologyError::MissingPort(_))));
    }

    #[test]
    fn truncated_document_is_malformed() {
        let text = &ONE_SWITCH[..ONE_SWITCH.len() / 2];
        assert!(matches!(parse_converter(text), Err(TopologyError::MalformedDocument(_))));
    }

    #[test]
    fn right_indexed_control_word() {
        let w = ControlWord::parse("0001010100101010").unwrap();
        let v: Vec<u8> = control_to_vconts(&w).into_iter().collect();
        assert_eq!(v, vec![2, 4, 6, 9, 11, 13]);
        let seven = ControlWord::parse("0100101010101010").unwrap();
        let v: Vec<u8> = control_to_vconts(&seven).into_iter().collect();
        assert_eq!(v, vec![2, 4, 6, 8, 10, 12, 15]);
        assert!(control_to_vconts(&ControlWord::zeros(8)).is_empty());
        assert_eq!(vconts_to_control(&control_to_vconts(&w), 8).unwrap(), w);
    }

    #[test]
    fn bit_convention_is_phase_major_within_mode() {
        assert_eq!(ControlWord::bit_position(0, Phase::One), 1);
        assert_eq!(ControlWord::bit_position(0, Phase::Two), 2);
        assert_eq!(ControlWord::bit_position(1, Phase::One), 3);
        assert_eq!(ControlWord::bit_position(7, Phase::Two), 16);
    }

    #[test]
    fn normalization_renames_nets() {
        let text = r#"{"version":1,"n_modes":1,"ports":{"vin":"in","vout":"out","gnd":"0"},
            "switches":[{"id":2,"a":"x","b":"out","ctrl":"01"},{"id":1,"a":"in","b":"x","ctrl":"01"}],
            "capacitors":[{"id":1,"p":"x","n":"0"}]}"#;
        let c = parse_converter(text).unwrap().normalized();
        assert_eq!(c.switches()[0].a, "VIN");
        assert_eq!(c.switches()[0].b, "n1");
        assert_eq!(c.switches()[1].b, "VOUT");
        assert_eq!(c.capacitors()[0].n, "GND");
    }
}
