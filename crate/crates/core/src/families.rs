//! Known-valid converter families and random topology generators.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::topology::{Capacitor, ControlWord, Converter, Phase, Ports, Switch, TopologyError};

/// Incremental converter construction with automatic ids.
#[derive(Debug, Clone)]
pub struct Builder {
    n_modes: usize,
    switches: Vec<Switch>,
    caps: Vec<Capacitor>,
}

impl Builder {
    pub fn new(n_modes: usize) -> Self {
        Self { n_modes, switches: Vec::new(), caps: Vec::new() }
    }

    pub fn cap(&mut self, p: &str, n: &str) -> u32 {
        let id = self.caps.len() as u32 + 1;
        self.caps.push(Capacitor { id, p: p.into(), n: n.into() });
        id
    }

    /// Adds a switch that conducts in the listed (0-based mode, phase) slots.
    pub fn switch(&mut self, a: &str, b: &str, on: &[(usize, Phase)]) -> u32 {
        let id = self.switches.len() as u32 + 1;
        let mut control = ControlWord::zeros(self.n_modes);
        for &(m, ph) in on {
            control.set(m, ph, true);
        }
        self.switches.push(Switch { id, a: a.into(), b: b.into(), control });
        id
    }

    /// Turns an existing switch on in one more slot.
    pub fn enable(&mut self, id: u32, mode: usize, phase: Phase) {
        self.switches[id as usize - 1].control.set(mode, phase, true);
    }

    pub fn build(self) -> Result<Converter, TopologyError> {
        Converter::new(Ports::default(), self.switches, self.caps, self.n_modes)
    }
}

const P1: Phase = Phase::One;
const P2: Phase = Phase::Two;

/// 2:1 converter: the capacitor sits between input and output in phase 1 and
/// across the output in phase 2.
pub fn halver() -> Converter {
    series_parallel_down(1)
}

/// Ratio `1/(j+1)`: `j` capacitors in series from input to output in phase 1,
/// each in parallel with the output in phase 2. Uses `3j + 1` switches.
pub fn series_parallel_down(j: usize) -> Converter {
    let mut b = Builder::new(1);
    let p = |i: usize| format!("p{i}");
    let n = |i: usize| format!("n{i}");
    for i in 1..=j {
        b.cap(&p(i), &n(i));
    }
    b.switch("VIN", &p(1), &[(0, P1)]);
    for i in 1..j {
        b.switch(&n(i), &p(i + 1), &[(0, P1)]);
    }
    b.switch(&n(j), "VOUT", &[(0, P1)]);
    for i in 1..=j {
        b.switch(&p(i), "VOUT", &[(0, P2)]);
        b.switch(&n(i), "GND", &[(0, P2)]);
    }
    b.build().expect("series-parallel family is valid")
}

/// Ratio `j/(j+1)`: `j` capacitors in series from output to ground in phase 1,
/// each between input and output in phase 2.
pub fn series_parallel_up(j: usize) -> Converter {
    let mut b = Builder::new(1);
    let p = |i: usize| format!("p{i}");
    let n = |i: usize| format!("n{i}");
    for i in 1..=j {
        b.cap(&p(i), &n(i));
    }
    b.switch("VOUT", &p(1), &[(0, P1)]);
    for i in 1..j {
        b.switch(&n(i), &p(i + 1), &[(0, P1)]);
    }
    b.switch(&n(j), "GND", &[(0, P1)]);
    for i in 1..=j {
        b.switch(&p(i), "VIN", &[(0, P2)]);
        b.switch(&n(i), "VOUT", &[(0, P2)]);
    }
    b.build().expect("series-parallel family is valid")
}

/// Unity ratio through a single input-output switch conducting in phase 1;
/// the output-ground switch never conducts and only anchors the ground port.
pub fn direct_path() -> Converter {
    let mut b = Builder::new(1);
    b.switch("VIN", "VOUT", &[(0, P1)]);
    b.switch("VOUT", "GND", &[]);
    b.build().expect("direct path is valid")
}

/// Unity ratio by charge dumping: the capacitor charges across the input in
/// phase 1 and discharges across the output in phase 2.
pub fn charge_dump() -> Converter {
    let mut b = Builder::new(1);
    b.cap("p", "GND");
    b.switch("VIN", "p", &[(0, P1)]);
    b.switch("p", "VOUT", &[(0, P2)]);
    b.build().expect("charge dump is valid")
}

/// Two-mode converters with ratios `{1/2, 1}` built on the 2:1 cell
/// (switches VIN-p, n-VOUT, p-VOUT, n-GND).
pub fn toy_seeds() -> Vec<Converter> {
    // (phase-1 switches, phase-2 switches) of the unity mode, 1-based.
    let unity: [(&[u32], &[u32]); 4] =
        [(&[1, 4], &[3, 4]), (&[3, 4], &[1, 4]), (&[1, 2], &[2, 3]), (&[2, 3], &[1, 2])];
    let mut out = Vec::new();
    for swap in [false, true] {
        for (u1, u2) in unity {
            let (h1, h2) = if swap { (P2, P1) } else { (P1, P2) };
            let mut b = halver_cell(2, h1, h2);
            for &s in u1 {
                b.enable(s, 1, P1);
            }
            for &s in u2 {
                b.enable(s, 1, P2);
            }
            out.push(b.build().expect("toy seed is valid"));
        }
    }
    for (d, c) in [(P1, P2), (P2, P1)] {
        let mut b = halver_cell(2, P1, P2);
        b.switch("VIN", "VOUT", &[(1, d)]);
        b.enable(3, 1, c);
        b.enable(4, 1, c);
        out.push(b.build().expect("toy seed is valid"));
    }
    out
}

/// Every two-mode control assignment over the 2:1 cell, with and without a
/// VIN-VOUT bypass switch: mode 0 runs the cell in either phase order and
/// each switch takes any subset of the mode-1 slots. Not all are functional.
pub fn toy_cell_variants() -> Vec<Converter> {
    let mut out = Vec::new();
    for bypass in [false, true] {
        let n = if bypass { 5 } else { 4 };
        for (series, parallel) in [(P1, P2), (P2, P1)] {
            for code in 0..4usize.pow(n) {
                let mut b = halver_cell(2, series, parallel);
                if bypass {
                    b.switch("VIN", "VOUT", &[]);
                }
                let mut c = code;
                for id in 1..=n {
                    if c & 1 != 0 {
                        b.enable(id, 1, P1);
                    }
                    if c & 2 != 0 {
                        b.enable(id, 1, P2);
                    }
                    c >>= 2;
                }
                if let Ok(conv) = b.build() {
                    out.push(conv);
                }
            }
        }
    }
    out
}

/// The 2:1 cell for mode 0, with the series phase `series` and the parallel
/// phase `parallel`; other modes start off.
fn halver_cell(n_modes: usize, series: Phase, parallel: Phase) -> Builder {
    let mut b = Builder::new(n_modes);
    b.cap("p", "n");
    b.switch("VIN", "p", &[(0, series)]);
    b.switch("n", "VOUT", &[(0, series)]);
    b.switch("p", "VOUT", &[(0, parallel)]);
    b.switch("n", "GND", &[(0, parallel)]);
    b
}

/// Random single- or multi-mode topology over port nets and capacitor
/// terminals. Every capacitor terminal gets at least one switch. May return
/// `None` when the draw violates a converter invariant.
pub fn random_converter<R: Rng>(
    rng: &mut R,
    n_modes: usize,
    n_caps: usize,
    max_switches: usize,
) -> Option<Converter> {
    let mut b = Builder::new(n_modes);
    let mut terminals = Vec::new();
    for i in 1..=n_caps {
        let (p, n) = (format!("p{i}"), format!("n{i}"));
        // Occasionally tie a negative terminal straight to ground.
        let n = if rng.gen_bool(0.15) { "GND".to_string() } else { n };
        b.cap(&p, &n);
        terminals.push(p);
        if n != "GND" {
            terminals.push(n);
        }
    }
    let mut nets: Vec<String> = ["VIN", "VOUT", "GND"].iter().map(|s| s.to_string()).collect();
    nets.extend(terminals.iter().cloned());
    let random_slots = |rng: &mut R| -> Vec<(usize, Phase)> {
        let mut slots = Vec::new();
        for m in 0..n_modes {
            let r: f64 = rng.gen();
            if r < 0.45 {
                slots.push((m, P1));
            } else if r < 0.9 {
                slots.push((m, P2));
            } else if r < 0.95 {
                slots.push((m, P1));
                slots.push((m, P2));
            }
        }
        slots
    };
    let mut used = 0;
    let mut order = terminals.clone();
    order.shuffle(rng);
    for t in &order {
        if used >= max_switches {
            return None;
        }
        let other = loop {
            let o = nets.choose(rng).unwrap();
            if o != t {
                break o.clone();
            }
        };
        let slots = random_slots(rng);
        b.switch(t, &other, &slots);
        used += 1;
    }
    // Guarantee the ports are touched.
    for port in ["VIN", "VOUT"] {
        if used < max_switches && rng.gen_bool(0.8) {
            let t = terminals.choose(rng)?;
            let slots = random_slots(rng);
            b.switch(port, t, &slots);
            used += 1;
        }
    }
    let extra = rng.gen_range(0..=max_switches.saturating_sub(used));
    for _ in 0..extra {
        let a = nets.choose(rng).unwrap().clone();
        let c = nets.choose(rng).unwrap().clone();
        if a == c {
            continue;
        }
        let slots = random_slots(rng);
        b.switch(&a, &c, &slots);
    }
    b.build().ok()
}
