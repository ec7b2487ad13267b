//! Whole-converter analysis, figure of merit and report export.

use std::fmt::Write as _;

use serde_json::{json, Value};

use super::bounds::NormalizationBounds;
use super::engine::{analyze_mode, Metric, ModeAnalysis};
use super::rational::{self, Rational};
use super::AnalysisError;
use crate::phase::decouple_modes;
use crate::topology::Converter;

#[derive(Debug, Clone, PartialEq)]
pub struct ConverterReport {
    pub modes: Vec<ModeAnalysis>,
    pub targets: Vec<Rational>,
    /// Posed and at its target ratio, per mode.
    pub mode_valid: Vec<bool>,
    pub n_cap: usize,
    pub functional: bool,
    /// Normalized (SSL, FSL) per mode, when the mode is posed and bounded.
    pub normalized: Vec<Option<(f64, f64)>>,
    pub fom: Option<f64>,
    /// Targets with no entry in the bounds table.
    pub missing_bounds: Vec<String>,
    pub n_cap_max: f64,
}

/// Mean over modes of `(ssl + fsl) / 2`, minus the normalized capacitor count.
pub fn figure_of_merit(normalized: &[(f64, f64)], n_cap: usize, n_cap_max: f64) -> f64 {
    let n = normalized.len().max(1) as f64;
    let perf: f64 = normalized.iter().map(|(s, f)| 0.5 * s + 0.5 * f).sum::<f64>() / n;
    perf - (n_cap as f64 / n_cap_max).clamp(0.0, 1.0)
}

fn assemble(
    c: &Converter,
    modes: Vec<ModeAnalysis>,
    targets: &[Rational],
    bounds: &NormalizationBounds,
) -> ConverterReport {
    let mode_valid: Vec<bool> =
        modes.iter().zip(targets).map(|(m, t)| m.m() == Some(t)).collect();
    let functional = mode_valid.iter().all(|&v| v);
    let mut missing_bounds = Vec::new();
    let normalized: Vec<Option<(f64, f64)>> = modes
        .iter()
        .zip(targets)
        .map(|(m, t)| {
            let d = m.data()?;
            match bounds.get(t) {
                Some(b) => Some((d.m_ssl.normalized(b.ssl_max), d.m_fsl.normalized(b.fsl_max))),
                None => {
                    missing_bounds.push(rational::format(t));
                    None
                }
            }
        })
        .collect();
    let fom = if functional && missing_bounds.is_empty() {
        let all: Vec<(f64, f64)> = normalized.iter().map(|x| x.expect("functional modes are posed")).collect();
        Some(figure_of_merit(&all, c.n_caps(), bounds.n_cap_max))
    } else {
        None
    };
    ConverterReport {
        modes,
        targets: targets.to_vec(),
        mode_valid,
        n_cap: c.n_caps(),
        functional,
        normalized,
        fom,
        missing_bounds,
        n_cap_max: bounds.n_cap_max,
    }
}

fn check_targets(c: &Converter, targets: &[Rational]) -> Result<(), AnalysisError> {
    if targets.len() != c.n_modes() {
        return Err(AnalysisError::TargetCount { expected: c.n_modes(), found: targets.len() });
    }
    Ok(())
}

/// Full pipeline over every mode; modes run in parallel when the `parallel`
/// feature is on.
pub fn analyze_converter(
    c: &Converter,
    targets: &[Rational],
    bounds: &NormalizationBounds,
) -> Result<ConverterReport, AnalysisError> {
    check_targets(c, targets)?;
    let views = decouple_modes(c);
    #[cfg(feature = "parallel")]
    let modes: Vec<ModeAnalysis> = {
        use rayon::prelude::*;
        views.par_iter().map(|v| analyze_mode(c, v)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let modes: Vec<ModeAnalysis> = views.iter().map(|v| analyze_mode(c, v)).collect();
    Ok(assemble(c, modes, targets, bounds))
}

/// Single-threaded variant of [`analyze_converter`].
pub fn analyze_converter_serial(
    c: &Converter,
    targets: &[Rational],
    bounds: &NormalizationBounds,
) -> Result<ConverterReport, AnalysisError> {
    check_targets(c, targets)?;
    let modes = decouple_modes(c).iter().map(|v| analyze_mode(c, v)).collect();
    Ok(assemble(c, modes, targets, bounds))
}

fn q_json(q: &Rational) -> Value {
    Value::String(rational::format(q))
}

fn f_json(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn metric_json(m: &Metric) -> (Value, Value) {
    match m {
        Metric::Finite(q) => (q_json(q), f_json(rational::to_f64(q))),
        Metric::Unbounded => (Value::String("unbounded".into()), Value::Null),
    }
}

impl ConverterReport {
    pub fn valid_modes(&self) -> usize {
        self.mode_valid.iter().filter(|&&v| v).count()
    }

    /// Raw per-mode metric averages over posed modes (infinite if any is unbounded).
    pub fn average_metrics(&self) -> Option<(f64, f64)> {
        let posed: Vec<_> = self.modes.iter().filter_map(|m| m.data()).collect();
        if posed.is_empty() {
            return None;
        }
        let n = posed.len() as f64;
        let ssl = posed.iter().map(|d| d.m_ssl.to_f64()).sum::<f64>() / n;
        let fsl = posed.iter().map(|d| d.m_fsl.to_f64()).sum::<f64>() / n;
        Some((ssl, fsl))
    }

    pub fn to_json(&self) -> Value {
        let modes: Vec<Value> = self
            .modes
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let target = &self.targets[i];
                let mut obj = json!({
                    "mode": i + 1,
                    "target": q_json(target),
                    "posed": m.posed(),
                    "valid": self.mode_valid[i],
                });
                match &m.result {
                    Err(reason) => {
                        obj["reason"] = Value::String(reason.to_string());
                    }
                    Ok(d) => {
                        let qs = |v: &[Rational]| Value::Array(v.iter().map(q_json).collect());
                        let fs = |v: &[Rational]| {
                            Value::Array(v.iter().map(|q| f_json(rational::to_f64(q))).collect())
                        };
                        let (ssl, ssl_f) = metric_json(&d.m_ssl);
                        let (fsl, fsl_f) = metric_json(&d.m_fsl);
                        obj["m"] = q_json(&d.m);
                        obj["m_f64"] = f_json(rational::to_f64(&d.m));
                        obj["v_c"] = qs(&d.v_c);
                        obj["v_c_f64"] = fs(&d.v_c);
                        obj["a_c"] = qs(&d.charges.a_c);
                        obj["a_c_f64"] = fs(&d.charges.a_c);
                        obj["a_in"] = qs(&d.charges.a_in);
                        obj["a_out"] = qs(&d.charges.a_out);
                        obj["a_r"] = Value::Array(d.switches.a_r.iter().map(|a| qs(a)).collect());
                        obj["v_r"] = Value::Array(d.switches.v_r.iter().map(|v| qs(v)).collect());
                        obj["floating_blocking"] = json!(d.switches.floating_count());
                        obj["m_ssl"] = ssl;
                        obj["m_ssl_f64"] = ssl_f;
                        obj["m_fsl"] = fsl;
                        obj["m_fsl_f64"] = fsl_f;
                        obj["cap_shares"] = qs(&d.sizing.cap_shares);
                        obj["switch_shares"] = qs(&d.sizing.switch_shares);
                        if let Some((s, f)) = self.normalized[i] {
                            obj["ssl_normalized"] = f_json(s);
                            obj["fsl_normalized"] = f_json(f);
                        }
                    }
                }
                obj
            })
            .collect();
        let (avg_ssl, avg_fsl) = self.average_metrics().map_or((Value::Null, Value::Null), |(s, f)| (f_json(s), f_json(f)));
        json!({
            "functional": self.functional,
            "valid_modes": self.valid_modes(),
            "n_cap": self.n_cap,
            "n_cap_max": self.n_cap_max,
            "fom": self.fom.map_or(Value::Null, f_json),
            "avg_m_ssl": avg_ssl,
            "avg_m_fsl": avg_fsl,
            "missing_bounds": self.missing_bounds,
            "modes": modes,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,target,posed,M,M_SSL,M_FSL\n");
        for (i, m) in self.modes.iter().enumerate() {
            let (mm, ssl, fsl) = match m.data() {
                Some(d) => (rational::format(&d.m), d.m_ssl.text(), d.m_fsl.text()),
                None => (String::new(), String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{mm},{ssl},{fsl}",
                i + 1,
                rational::format(&self.targets[i]),
                m.posed()
            );
        }
        let _ = writeln!(out, "N_cap,{}", self.n_cap);
        let _ = writeln!(out, "FoM,{}", self.fom.map_or(String::new(), |f| format!("{f}")));
        out
    }
}
