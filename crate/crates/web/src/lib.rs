//! wasm-bindgen surface for the static demo page in `www/`.
//!
//! Every export takes and returns JSON text; errors come back as strings so
//! the page can show them verbatim.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use scgenie::analysis::bounds::NormalizationBounds;
use scgenie::analysis::engine::{fsl_impedance, ssl_impedance};
use scgenie::analysis::rational::{self, Rational};
use scgenie::analysis::report::analyze_converter;
use scgenie::topology::{
    canonical_form, euler_decode, euler_encode, from_pin_graph, parse_converter, to_pin_graph, Converter,
    TokenVocabulary, VocabConfig,
};

fn converter(doc: &str) -> Result<Converter, String> {
    parse_converter(doc).map_err(|e| e.to_string())
}

fn targets(text: &str, n_modes: usize) -> Result<Vec<Rational>, String> {
    let parsed = text
        .split(',')
        .map(|t| rational::parse(t.trim()).ok_or_else(|| format!("target `{}` is not a ratio", t.trim())))
        .collect::<Result<Vec<_>, _>>()?;
    match parsed.len() {
        1 => Ok(vec![parsed[0].clone(); n_modes]),
        n if n == n_modes => Ok(parsed),
        n => Err(format!("{n} targets given for {n_modes} modes")),
    }
}

/// Full report for a converter document against comma-separated targets.
#[wasm_bindgen]
pub fn analyze(doc: &str, target_list: &str) -> Result<String, String> {
    let c = converter(doc)?;
    let t = targets(target_list, c.n_modes())?;
    let report = analyze_converter(&c, &t, &NormalizationBounds::shipped()).map_err(|e| e.to_string())?;
    let mut out = report.to_json();
    out["canonical"] = json!(canonical_form(&to_pin_graph(&c.normalized())).hex());
    Ok(out.to_string())
}

/// Pin graph as DOT plus one seeded Euler traversal, decoded back as a check.
#[wasm_bindgen]
pub fn encode(doc: &str, seed: u64, max_switches: u32, max_caps: u32) -> Result<String, String> {
    let c = converter(doc)?;
    let vocab = TokenVocabulary::new(VocabConfig { max_switches, max_caps });
    let g = to_pin_graph(&c);
    let seq = euler_encode(&g, &vocab, seed).map_err(|e| e.to_string())?;
    let back = euler_decode(&seq, &vocab).map_err(|e| e.to_string())?;
    let same = from_pin_graph(&back, c.n_modes())
        .map(|d| canonical_form(&to_pin_graph(&d)) == canonical_form(&g))
        .unwrap_or(false);
    Ok(json!({
        "dot": g.to_dot(),
        "tokens": seq.tokens,
        "names": seq.tokens.iter().map(|&t| vocab.token_name(t)).collect::<Vec<_>>(),
        "round_trip": same,
    })
    .to_string())
}

/// Output impedance of one mode over a log-spaced frequency range, with every
/// capacitor at `cap` farads and every switch at `r_on` ohms.
#[wasm_bindgen]
pub fn impedance_sweep(
    doc: &str,
    target_list: &str,
    mode: usize,
    f_min: f64,
    f_max: f64,
    points: usize,
    cap: f64,
    r_on: f64,
) -> Result<String, String> {
    if !(f_min > 0.0 && f_max > f_min && points >= 2 && cap > 0.0 && r_on > 0.0) {
        return Err("need 0 < f_min < f_max, points >= 2, cap > 0 and r_on > 0".into());
    }
    let c = converter(doc)?;
    let t = targets(target_list, c.n_modes())?;
    let report = analyze_converter(&c, &t, &NormalizationBounds::shipped()).map_err(|e| e.to_string())?;
    let m = mode.checked_sub(1).and_then(|i| report.modes.get(i)).ok_or_else(|| format!("no mode {mode}"))?;
    let data = m.data().ok_or_else(|| format!("mode {mode} is not properly posed"))?;
    let caps = vec![cap; data.charges.a_c.len()];
    let fsl = fsl_impedance(&data.switches, &vec![r_on; data.switches.a_r.len()]);
    let step = (f_max / f_min).ln() / (points - 1) as f64;
    let sweep: Vec<Value> = (0..points)
        .map(|i| {
            let f = f_min * (step * i as f64).exp();
            let ssl = ssl_impedance(&data.charges.a_c, &caps, f);
            json!({ "f": f, "ssl": ssl, "fsl": fsl, "total": ssl.hypot(fsl) })
        })
        .collect();
    Ok(json!({ "mode": mode, "ratio": rational::format(&data.m), "points": sweep }).to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use scgenie::families;

    fn halver() -> String {
        families::halver().to_json()
    }

    #[test]
    fn analyze_reports_the_halver() {
        let v: Value = serde_json::from_str(&analyze(&halver(), "1/2").unwrap()).unwrap();
        assert_eq!(v["functional"], json!(true));
        assert_eq!(v["canonical"].as_str().unwrap().len(), 64);
        assert!(analyze(&halver(), "1/3,1/2").is_err());
        assert!(analyze("{}", "1/2").is_err());
    }

    #[test]
    fn encode_round_trips() {
        let v: Value = serde_json::from_str(&encode(&halver(), 7, 8, 2).unwrap()).unwrap();
        assert_eq!(v["round_trip"], json!(true));
        assert!(v["dot"].as_str().unwrap().starts_with("graph pins {"));
        assert_eq!(v["tokens"].as_array().unwrap().len(), v["names"].as_array().unwrap().len());
    }

    #[test]
    fn sweep_falls_to_the_fsl_floor() {
        let v: Value =
            serde_json::from_str(&impedance_sweep(&halver(), "1/2", 1, 1e3, 1e8, 11, 1e-6, 0.01).unwrap()).unwrap();
        let pts = v["points"].as_array().unwrap();
        assert_eq!(pts.len(), 11);
        let total: Vec<f64> = pts.iter().map(|p| p["total"].as_f64().unwrap()).collect();
        assert!(total.windows(2).all(|w| w[1] <= w[0]));
        let fsl = pts[0]["fsl"].as_f64().unwrap();
        assert!((total[10] - fsl).abs() / fsl < 1e-2);
        assert!(impedance_sweep(&halver(), "1/2", 2, 1e3, 1e8, 11, 1e-6, 0.01).is_err());
        assert!(impedance_sweep(&halver(), "1/2", 1, 1e3, 1e2, 11, 1e-6, 0.01).is_err());
    }
}
