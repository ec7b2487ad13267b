//! Posedness, conversion ratio, charge multipliers and the SSL/FSL metrics of
//! single modes, in exact arithmetic.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use super::kirchhoff::{
    cutset_matrix, loop_matrix, spanning_forest, spanning_forest_ordered, to_big, CutsetSystem,
    LoopSystem,
};
use super::rational::{self, Rational};
use super::AnalysisError;
use crate::phase::{
    contracted_phase_graph, switch_inclusive_phase_graph, BranchKind, ModeView, PhaseNetwork,
};
use crate::topology::{Converter, Phase};
use crate::util::UnionFind;

/// A topology metric; `Unbounded` when its denominator vanishes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Metric {
    Finite(Rational),
    Unbounded,
}

impl Metric {
    fn from_ratio(num: Rational, den: Rational) -> Self {
        if den.is_zero() {
            Metric::Unbounded
        } else {
            Metric::Finite(num / den)
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Metric::Finite(q) => rational::to_f64(q),
            Metric::Unbounded => f64::INFINITY,
        }
    }

    /// Min-max normalized against `max`, clamped to [0, 1].
    pub fn normalized(&self, max: f64) -> f64 {
        match self {
            Metric::Unbounded => 1.0,
            Metric::Finite(q) => (rational::to_f64(q) / max).clamp(0.0, 1.0),
        }
    }

    pub fn text(&self) -> String {
        match self {
            Metric::Finite(q) => rational::format(q),
            Metric::Unbounded => "unbounded".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NotPosed {
    LoopNonSquare { rows: usize, cols: usize },
    LoopSingular,
    CutsetNonSquare { rows: usize, cols: usize },
    CutsetSingular,
}

impl std::fmt::Display for NotPosed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NotPosed::LoopNonSquare { rows, cols } => write!(f, "B_c is {rows}x{cols}, not square"),
            NotPosed::LoopSingular => f.write_str("B_c is singular"),
            NotPosed::CutsetNonSquare { rows, cols } => write!(f, "Q_c is {rows}x{cols}, not square"),
            NotPosed::CutsetSingular => f.write_str("Q_c is singular"),
        }
    }
}

/// `Ok(())` when both reduced systems are square and invertible.
pub fn check_properly_posed(l: &LoopSystem, c: &CutsetSystem) -> Result<(), NotPosed> {
    let b_c = l.b_c();
    let cols = l.n_caps + 1;
    if b_c.len() != cols {
        return Err(NotPosed::LoopNonSquare { rows: b_c.len(), cols });
    }
    if rational::determinant(&to_big(&b_c)).is_zero() {
        return Err(NotPosed::LoopSingular);
    }
    let cols = c.n_caps + 3;
    if c.q_c.len() != cols {
        return Err(NotPosed::CutsetNonSquare { rows: c.q_c.len(), cols });
    }
    if rational::determinant(&to_big(&c.q_c)).is_zero() {
        return Err(NotPosed::CutsetSingular);
    }
    Ok(())
}

/// `(M, v_c)` from `B_c x = -b_in` with unit input voltage.
pub fn extract_vcr(l: &LoopSystem) -> Result<(Rational, Vec<Rational>), AnalysisError> {
    let b_c = l.b_c();
    if b_c.len() != l.n_caps + 1 {
        return Err(AnalysisError::NotPosed);
    }
    let rhs: Vec<Rational> = l.b_in().iter().map(|&x| Rational::from_integer((-x).into())).collect();
    let mut x = rational::solve_vector(&to_big(&b_c), &rhs).ok_or(AnalysisError::NotPosed)?;
    let m = x.pop().expect("output column");
    Ok((m, x))
}

/// Per-cycle branch charges per unit of output charge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChargeSolution {
    /// Source charge per phase (negative when the source delivers).
    pub a_in: [Rational; 2],
    /// Capacitor charge in phase 1; phase 2 carries the negation.
    pub a_c: Vec<Rational>,
    pub a_out: [Rational; 2],
}

impl ChargeSolution {
    /// Charges of `[source, caps.., output]` in a phase.
    pub fn phase_charges(&self, phase: Phase) -> Vec<Rational> {
        let i = phase.index();
        let mut q = vec![self.a_in[i].clone()];
        q.extend(self.a_c.iter().map(|a| if i == 0 { a.clone() } else { -a }));
        q.push(self.a_out[i].clone());
        q
    }
}

/// Solves `Q_c a = -q_out` for unit output charge.
pub fn charge_multipliers(c: &CutsetSystem) -> Result<ChargeSolution, AnalysisError> {
    if c.q_c.len() != c.n_caps + 3 {
        return Err(AnalysisError::NotPosed);
    }
    let rhs: Vec<Rational> = c.q_out.iter().map(|&x| Rational::from_integer((-x).into())).collect();
    let a = rational::solve_vector(&to_big(&c.q_c), &rhs).ok_or(AnalysisError::NotPosed)?;
    let k = c.n_caps;
    let a_out1 = a[k + 2].clone();
    let a_out2 = Rational::one() - &a_out1;
    Ok(ChargeSolution {
        a_in: [a[0].clone(), a[1].clone()],
        a_c: a[2..2 + k].to_vec(),
        a_out: [a_out1, a_out2],
    })
}

/// `2 M^2 / (sum |a_c| |v_c|)^2`.
pub fn ssl_metric(a_c: &[Rational], v_c: &[Rational], m: &Rational) -> Metric {
    let s: Rational = a_c.iter().zip(v_c).map(|(a, v)| a.abs() * v.abs()).sum();
    Metric::from_ratio(Rational::from_integer(2.into()) * m * m, &s * &s)
}

/// Switch charge multipliers (conducting phases) and blocking voltages
/// (open phases), indexed by switch position then phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchParameters {
    pub a_r: Vec<[Rational; 2]>,
    pub v_r: Vec<[Rational; 2]>,
    /// Open switches whose voltage no loop fixes (recorded as 0).
    pub floating: Vec<[bool; 2]>,
}

impl SwitchParameters {
    /// `(|a_r|, |v_r|)` per switch: largest magnitudes over the phases.
    pub fn magnitudes(&self) -> Vec<(Rational, Rational)> {
        self.a_r
            .iter()
            .zip(&self.v_r)
            .map(|(a, v)| {
                let am = a[0].abs().max(a[1].abs());
                let vm = v[0].abs().max(v[1].abs());
                (am, vm)
            })
            .collect()
    }

    pub fn floating_count(&self) -> usize {
        self.floating.iter().flatten().filter(|&&f| f).count()
    }
}

/// Injection of charge into each node from the listed branch charges.
fn injections(p: &PhaseNetwork, charges: &[Rational]) -> Vec<Rational> {
    let mut inj = vec![Rational::zero(); p.n_nodes()];
    for (b, q) in p.branches.iter().zip(charges) {
        inj[b.head] += q;
        inj[b.tail] -= q;
    }
    inj
}

/// Charge through each closed switch: unit-conductance current division of
/// the node injections over the closed-switch network.
fn closed_switch_charges(
    p: &PhaseNetwork,
    switch_branches: &[usize],
    closed: &[bool],
    inj: &[Rational],
) -> Result<Vec<Rational>, AnalysisError> {
    let n = p.n_nodes();
    let mut uf = UnionFind::new(n);
    for (k, &j) in switch_branches.iter().enumerate() {
        if closed[k] {
            uf.union(p.branches[j].tail, p.branches[j].head);
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        members.entry(uf.find(v)).or_default().push(v);
    }
    let mut potential = vec![Rational::zero(); n];
    for (&root, nodes) in &members {
        if nodes.len() < 2 {
            continue;
        }
        let total: Rational = nodes.iter().map(|&v| &inj[v]).sum();
        if !total.is_zero() {
            return Err(AnalysisError::Inconsistent(
                "charge does not balance across a closed-switch cluster".into(),
            ));
        }
        // The first node of the cluster is grounded.
        let local: BTreeMap<usize, usize> =
            nodes.iter().skip(1).enumerate().map(|(i, &v)| (v, i)).collect();
        let size = local.len();
        let mut lap = vec![vec![BigInt::zero(); size]; size];
        for (k, &j) in switch_branches.iter().enumerate() {
            let (a, b) = (p.branches[j].tail, p.branches[j].head);
            if !closed[k] || a == b || uf.find(a) != root {
                continue;
            }
            let (la, lb) = (local.get(&a).copied(), local.get(&b).copied());
            if let Some(x) = la {
                lap[x][x] += 1;
            }
            if let Some(y) = lb {
                lap[y][y] += 1;
            }
            if let (Some(x), Some(y)) = (la, lb) {
                lap[x][y] -= 1;
                lap[y][x] -= 1;
            }
        }
        let rhs: Vec<Rational> = nodes.iter().skip(1).map(|&v| inj[v].clone()).collect();
        let sol = rational::solve_vector(&lap, &rhs)
            .ok_or_else(|| AnalysisError::Inconsistent("singular closed-switch network".into()))?;
        for (&v, &i) in &local {
            potential[v] = sol[i].clone();
        }
    }
    Ok(switch_branches
        .iter()
        .enumerate()
        .map(|(k, &j)| {
            if closed[k] {
                &potential[p.branches[j].tail] - &potential[p.branches[j].head]
            } else {
                Rational::zero()
            }
        })
        .collect())
}

/// Blocking voltages of open switches from fundamental loops of the
/// switch-inclusive graph, with fixed branches and closed switches preferred
/// as twigs.
fn open_switch_voltages(
    p: &PhaseNetwork,
    switch_branches: &[usize],
    closed: &[bool],
    fixed_voltages: &[Rational],
) -> (Vec<Rational>, Vec<bool>) {
    let n_fixed = fixed_voltages.len();
    let endpoints = p.endpoints();
    let mut order: Vec<usize> = (0..n_fixed).collect();
    order.extend(switch_branches.iter().zip(closed).filter(|(_, &c)| c).map(|(&j, _)| j));
    order.extend(switch_branches.iter().zip(closed).filter(|(_, &c)| !c).map(|(&j, _)| j));
    let forest = spanning_forest_ordered(p.n_nodes(), &endpoints, &order);
    let b = loop_matrix(p.n_nodes(), &endpoints, &forest);
    let mut is_open = vec![false; endpoints.len()];
    for (k, &j) in switch_branches.iter().enumerate() {
        is_open[j] = !closed[k];
    }
    let mut voltages = vec![Rational::zero(); switch_branches.len()];
    let mut floating = vec![false; switch_branches.len()];
    for (k, &j) in switch_branches.iter().enumerate() {
        if closed[k] {
            continue;
        }
        let Some(row) = forest.links.iter().position(|&l| l == j) else {
            floating[k] = true;
            continue;
        };
        let row = &b[row];
        if row.iter().enumerate().any(|(i, &x)| i != j && x != 0 && is_open[i]) {
            floating[k] = true;
            continue;
        }
        let mut v = Rational::zero();
        for (i, &x) in row.iter().enumerate().take(n_fixed) {
            if x != 0 {
                v -= Rational::from_integer(x.into()) * &fixed_voltages[i];
            }
        }
        voltages[k] = v;
    }
    (voltages, floating)
}

/// Switch parameters from the two switch-inclusive phase graphs.
pub fn fsl_parameters(
    graphs: [&PhaseNetwork; 2],
    v_c: &[Rational],
    m: &Rational,
    charges: &ChargeSolution,
) -> Result<SwitchParameters, AnalysisError> {
    let n_fixed = v_c.len() + 2;
    let switch_branches: Vec<usize> = (n_fixed..graphs[0].branches.len()).collect();
    let n_sw = switch_branches.len();
    let mut fixed_voltages = vec![Rational::one()];
    fixed_voltages.extend(v_c.iter().cloned());
    fixed_voltages.push(m.clone());

    let mut a_r = vec![[Rational::zero(), Rational::zero()]; n_sw];
    let mut v_r = vec![[Rational::zero(), Rational::zero()]; n_sw];
    let mut floating = vec![[false, false]; n_sw];
    for phase in Phase::BOTH {
        let p = graphs[phase.index()];
        let closed: Vec<bool> = switch_branches
            .iter()
            .map(|&j| matches!(p.branches[j].kind, BranchKind::Switch { closed: true, .. }))
            .collect();
        let q = charges.phase_charges(phase);
        let inj = injections(p, &q);
        let a = closed_switch_charges(p, &switch_branches, &closed, &inj)?;
        let (v, fl) = open_switch_voltages(p, &switch_branches, &closed, &fixed_voltages);
        let i = phase.index();
        for k in 0..n_sw {
            a_r[k][i] = a[k].clone();
            v_r[k][i] = v[k].clone();
            floating[k][i] = fl[k];
        }
    }
    Ok(SwitchParameters { a_r, v_r, floating })
}

/// `M^2 / (2 (sum |a_r| |v_r|)^2)`.
pub fn fsl_metric(params: &SwitchParameters, m: &Rational) -> Metric {
    let s: Rational = params.magnitudes().iter().map(|(a, v)| a * v).sum();
    Metric::from_ratio(m * m, Rational::from_integer(2.into()) * &s * &s)
}

/// Optimal component shares under fixed total capacitor energy and fixed
/// total switch cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizingRatios {
    pub cap_shares: Vec<Rational>,
    pub switch_shares: Vec<Rational>,
}

fn shares(pairs: &[(Rational, Rational)]) -> Vec<Rational> {
    let raw: Vec<Rational> = pairs
        .iter()
        .map(|(a, v)| if v.is_zero() { Rational::zero() } else { a.abs() / v.abs() })
        .collect();
    let total: Rational = raw.iter().sum();
    if total.is_zero() {
        return raw;
    }
    raw.into_iter().map(|x| x / &total).collect()
}

pub fn optimal_sizing(
    a_c: &[Rational],
    v_c: &[Rational],
    switches: &SwitchParameters,
) -> SizingRatios {
    let caps: Vec<(Rational, Rational)> = a_c.iter().cloned().zip(v_c.iter().cloned()).collect();
    SizingRatios { cap_shares: shares(&caps), switch_shares: shares(&switches.magnitudes()) }
}

/// Capacitances `2 E |a| / (|v| sum |a||v|)` storing `e_total` in total.
pub fn optimal_capacitances(a_c: &[Rational], v_c: &[Rational], e_total: f64) -> Vec<f64> {
    let s: f64 = a_c.iter().zip(v_c).map(|(a, v)| rational::to_f64(&(a.abs() * v.abs()))).sum();
    a_c.iter()
        .zip(v_c)
        .map(|(a, v)| {
            let (a, v) = (rational::to_f64(&a.abs()), rational::to_f64(&v.abs()));
            if v == 0.0 || s == 0.0 {
                0.0
            } else {
                2.0 * e_total * a / (v * s)
            }
        })
        .collect()
}

/// `sum a_c^2 / (C f_sw)`.
pub fn ssl_impedance(a_c: &[Rational], caps: &[f64], f_sw: f64) -> f64 {
    a_c.iter().zip(caps).map(|(a, c)| rational::to_f64(&(a * a)) / (c * f_sw)).sum()
}

/// `2 sum R_i sum_phase (a_i^phase)^2`.
pub fn fsl_impedance(params: &SwitchParameters, resistances: &[f64]) -> f64 {
    2.0 * params
        .a_r
        .iter()
        .zip(resistances)
        .map(|(a, r)| r * (rational::to_f64(&(&a[0] * &a[0])) + rational::to_f64(&(&a[1] * &a[1]))))
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosedData {
    pub m: Rational,
    pub v_c: Vec<Rational>,
    pub charges: ChargeSolution,
    pub switches: SwitchParameters,
    pub m_ssl: Metric,
    pub m_fsl: Metric,
    pub sizing: SizingRatios,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeAnalysis {
    pub mode: usize,
    pub result: Result<PosedData, NotPosed>,
}

impl ModeAnalysis {
    pub fn posed(&self) -> bool {
        self.result.is_ok()
    }

    pub fn data(&self) -> Option<&PosedData> {
        self.result.as_ref().ok()
    }

    pub fn m(&self) -> Option<&Rational> {
        self.data().map(|d| &d.m)
    }
}

/// Loop and cutset systems of a mode from its contracted phase graphs.
pub fn mode_systems(c: &Converter, view: &ModeView) -> (LoopSystem, CutsetSystem) {
    let n_caps = c.n_caps();
    let mut b = Vec::with_capacity(2);
    let mut q = Vec::with_capacity(2);
    for phase in Phase::BOTH {
        let p = contracted_phase_graph(c, view, phase);
        let e = p.endpoints();
        let f = spanning_forest(p.n_nodes(), &e);
        let bm = loop_matrix(p.n_nodes(), &e, &f);
        q.push(cutset_matrix(&f, &bm, e.len()));
        b.push(bm);
    }
    let q2 = q.pop().unwrap();
    let q1 = q.pop().unwrap();
    let b2 = b.pop().unwrap();
    let b1 = b.pop().unwrap();
    (LoopSystem { b1, b2, n_caps }, CutsetSystem::from_phase_cutsets(q1, q2, n_caps))
}

pub fn analyze_mode(c: &Converter, view: &ModeView) -> ModeAnalysis {
    let (l, cs) = mode_systems(c, view);
    let result = check_properly_posed(&l, &cs).and_then(|()| {
        let (m, v_c) = extract_vcr(&l).map_err(|_| NotPosed::LoopSingular)?;
        let charges = charge_multipliers(&cs).map_err(|_| NotPosed::CutsetSingular)?;
        let g1 = switch_inclusive_phase_graph(c, view, Phase::One);
        let g2 = switch_inclusive_phase_graph(c, view, Phase::Two);
        let switches =
            fsl_parameters([&g1, &g2], &v_c, &m, &charges).map_err(|_| NotPosed::CutsetSingular)?;
        let m_ssl = ssl_metric(&charges.a_c, &v_c, &m);
        let m_fsl = fsl_metric(&switches, &m);
        let sizing = optimal_sizing(&charges.a_c, &v_c, &switches);
        Ok(PosedData { m, v_c, charges, switches, m_ssl, m_fsl, sizing })
    });
    ModeAnalysis { mode: view.mode, result }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::decouple_modes;
    use crate::phase::tests::halver;

    fn q(p: i64, d: i64) -> Rational {
        Rational::new(p.into(), d.into())
    }

    #[test]
    fn halver_matrices_and_values() {
        let c = halver();
        let view = &decouple_modes(&c)[0];
        let (l, cs) = mode_systems(&c, view);
        assert_eq!(l.b1.len(), 1);
        assert_eq!(l.b2.len(), 1);
        assert_eq!(cs.q_c.len(), 4);
        check_properly_posed(&l, &cs).unwrap();
        let (m, v_c) = extract_vcr(&l).unwrap();
        assert_eq!(m, q(1, 2));
        assert_eq!(v_c, vec![q(1, 2)]);
        let a = charge_multipliers(&cs).unwrap();
        assert_eq!(a.a_c[0].abs(), q(1, 2));
        assert_eq!(a.a_in[0], q(-1, 2));
        assert_eq!(a.a_out, [q(1, 2), q(1, 2)]);
        assert_eq!(ssl_metric(&a.a_c, &v_c, &m), Metric::Finite(q(8, 1)));
    }

    #[test]
    fn halver_switches() {
        let c = halver();
        let r = analyze_mode(&c, &decouple_modes(&c)[0]);
        let d = r.data().unwrap();
        for (a, v) in d.switches.magnitudes() {
            assert_eq!(a, q(1, 2));
            assert_eq!(v, q(1, 2));
        }
        assert_eq!(d.m_fsl, Metric::Finite(q(1, 8)));
        assert_eq!(d.sizing.cap_shares, vec![q(1, 1)]);
        assert!((fsl_impedance(&d.switches, &[1.0; 4]) - 2.0).abs() < 1e-12);
        assert!((ssl_impedance(&d.charges.a_c, &[1e-9], 1e3) - 2.5e5).abs() < 1e-6);
    }

    #[test]
    fn two_cap_shares() {
        let a = vec![q(1, 2), q(1, 2)];
        let v = vec![q(1, 3), q(2, 3)];
        let none = SwitchParameters { a_r: vec![], v_r: vec![], floating: vec![] };
        let s = optimal_sizing(&a, &v, &none);
        assert_eq!(s.cap_shares, vec![q(2, 3), q(1, 3)]);
    }

    #[test]
    fn metric_normalization() {
        assert_eq!(Metric::Unbounded.normalized(3.0), 1.0);
        assert_eq!(Metric::Finite(q(3, 1)).normalized(6.0), 0.5);
        assert_eq!(Metric::Finite(q(9, 1)).normalized(6.0), 1.0);
        assert_eq!(Metric::Unbounded.text(), "unbounded");
    }
}
