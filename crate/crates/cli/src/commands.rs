use std::path::Path;

use clap::ValueEnum;
use serde::Deserialize;
use serde_json::json;

use scgenie::analysis::{analyze_converter, analyze_mode, rational, NormalizationBounds, Rational};
use scgenie::evolution::{validate_candidate, History, SearchContext};
use scgenie::oracle::{cross_validate, steady_state, OracleConfig, OracleError};
use scgenie::phase::decouple_modes;
use scgenie::store::{summarize_population, RunDir, POPULATION_FILE};
use scgenie::topology::euler::{read_jsonl, write_jsonl};
use scgenie::topology::{
    euler_encode, parse_converter, to_pin_graph, Converter, EulerSequence, SequenceRecord, TokenVocabulary,
    VocabConfig,
};

use crate::diag::{self, CliError, EXIT_DISCREPANCY, EXIT_INPUT, EXIT_NOT_FUNCTIONAL, EXIT_ORACLE};
use crate::VocabArgs;

pub fn load_converter(path: &Path) -> Result<Converter, CliError> {
    let text = diag::read(path)?;
    parse_converter(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn load_bounds(path: Option<&Path>) -> Result<NormalizationBounds, CliError> {
    match path {
        None => Ok(NormalizationBounds::shipped()),
        Some(p) => NormalizationBounds::from_json(&diag::read(p)?)
            .map_err(|e| CliError::input(format!("{}: {e}", p.display()))),
    }
}

/// A single target is repeated for every mode.
pub fn parse_targets(targets: &[String], n_modes: usize) -> Result<Vec<Rational>, CliError> {
    let parsed = targets
        .iter()
        .map(|t| rational::parse(t.trim()).ok_or_else(|| CliError::input(format!("target `{t}` is not a ratio"))))
        .collect::<Result<Vec<_>, _>>()?;
    match parsed.len() {
        1 => Ok(vec![parsed[0].clone(); n_modes]),
        n if n == n_modes => Ok(parsed),
        n => Err(CliError::input(format!("{n} targets given for {n_modes} modes"))),
    }
}

fn vocabulary(v: &VocabArgs) -> TokenVocabulary {
    TokenVocabulary::new(VocabConfig { max_switches: v.max_switches, max_caps: v.max_caps })
}

pub fn analyze(path: &Path, targets: &[String], bounds: Option<&Path>, out_dir: &Path) -> Result<u8, CliError> {
    let bounds = load_bounds(bounds)?;
    let c = load_converter(path)?;
    let targets = parse_targets(targets, c.n_modes())?;
    let report = analyze_converter(&c, &targets, &bounds).map_err(|e| CliError::input(e.to_string()))?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("converter");
    let json_path = out_dir.join(format!("{stem}.report.json"));
    let csv_path = out_dir.join(format!("{stem}.report.csv"));
    diag::write(&json_path, &(serde_json::to_string_pretty(&report.to_json()).expect("report serializes") + "\n"))?;
    diag::write(&csv_path, &report.to_csv())?;
    println!(
        "{}",
        json!({
            "functional": report.functional,
            "valid_modes": report.valid_modes(),
            "fom": report.fom,
            "json": json_path,
            "csv": csv_path,
        })
    );
    Ok(if report.functional { 0 } else { EXIT_NOT_FUNCTIONAL })
}

pub fn validate(
    path: &Path,
    targets: &[String],
    bounds: Option<&Path>,
    history: Option<&Path>,
    vocab: &VocabArgs,
) -> Result<u8, CliError> {
    let text = diag::read(path)?;
    let records = read_jsonl(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let bounds = load_bounds(bounds)?;
    let history = match history {
        None => History::new(),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            History::from_bytes(&bytes).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?
        }
    };
    let ctx = SearchContext { vocab: vocabulary(vocab), targets: parse_targets(targets, targets.len())?, bounds };
    let mut all_functional = true;
    for r in records {
        let out = validate_candidate(&EulerSequence { tokens: r.tokens }, &ctx, &history);
        all_functional &= out.functional();
        println!(
            "{}",
            json!({
                "circuit_id": r.circuit_id,
                "stage": out.stage,
                "passed": out.passed(),
                "functional": out.functional(),
                "terminated": out.terminated,
                "valid_modes": out.valid_modes,
                "ladder": out.ladder,
                "failure": out.failure.as_ref().map(|f| json!({"code": f.code(), "message": f.to_string()})),
                "canonical": out.canonical.as_ref().map(|c| c.hex()),
                "fom": out.report.as_ref().and_then(|r| r.fom),
            })
        );
    }
    Ok(if all_functional { 0 } else { EXIT_NOT_FUNCTIONAL })
}

/// Optional fields of an `oracle-check --config` file. Scalars broadcast.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleOverrides {
    capacitance: Option<f64>,
    capacitances: Option<Vec<f64>>,
    c_out: Option<f64>,
    resistance: Option<f64>,
    resistances: Option<Vec<f64>>,
    f_sw: Option<f64>,
    duty: Option<f64>,
    i_out: Option<f64>,
    v_in: Option<f64>,
    tolerance: Option<f64>,
    max_cycles: Option<usize>,
}

fn oracle_config(c: &Converter, path: Option<&Path>) -> Result<OracleConfig, CliError> {
    let mut cfg = OracleConfig::uniform(c);
    let Some(p) = path else { return Ok(cfg) };
    let o: OracleOverrides =
        serde_json::from_str(&diag::read(p)?).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
    if let Some(x) = o.capacitance {
        cfg.capacitances = vec![x; c.n_caps()];
    }
    if let Some(x) = o.resistance {
        cfg.resistances = vec![x; c.switches().len()];
    }
    cfg.capacitances = o.capacitances.unwrap_or(cfg.capacitances);
    cfg.resistances = o.resistances.unwrap_or(cfg.resistances);
    cfg.c_out = o.c_out.unwrap_or(cfg.c_out);
    cfg.f_sw = o.f_sw.unwrap_or(cfg.f_sw);
    cfg.duty = o.duty.unwrap_or(cfg.duty);
    cfg.i_out = o.i_out.unwrap_or(cfg.i_out);
    cfg.v_in = o.v_in.unwrap_or(cfg.v_in);
    cfg.tolerance = o.tolerance.unwrap_or(cfg.tolerance);
    cfg.max_cycles = o.max_cycles.unwrap_or(cfg.max_cycles);
    cfg.validate(c).map_err(|e| CliError::input(e.to_string()))?;
    Ok(cfg)
}

fn oracle_failure(mode: usize, e: &OracleError) -> CliError {
    let code = match e {
        OracleError::NoConvergence { .. } => "no_convergence",
        OracleError::SingularSystem { .. } | OracleError::SingularResistiveNetwork { .. } => "singular_system",
        OracleError::InvalidConfig(_) => return CliError::input(e.to_string()),
    };
    CliError::new(code, EXIT_ORACLE, format!("mode {mode}: {e}"))
}

pub fn oracle_check(path: &Path, config: Option<&Path>, inject: Option<&str>) -> Result<u8, CliError> {
    let c = load_converter(path)?;
    let cfg = oracle_config(&c, config)?;
    let delta = match inject {
        None => None,
        Some(t) => Some(rational::parse(t).ok_or_else(|| CliError::input(format!("`{t}` is not a ratio")))?),
    };
    let mut rows = Vec::new();
    let mut ok = true;
    for view in decouple_modes(&c) {
        let analysis = analyze_mode(&c, &view);
        let mut data = match analysis.result {
            Ok(d) => d,
            Err(reason) => {
                // Let the simulator speak first; its failure is the more specific one.
                if let Err(e) = steady_state(&c, &view, &cfg) {
                    return Err(oracle_failure(view.mode + 1, &e));
                }
                return Err(CliError::new(
                    "singular_system",
                    EXIT_ORACLE,
                    format!("mode {}: not properly posed: {reason}", view.mode + 1),
                ));
            }
        };
        if let Some(d) = &delta {
            data.m = &data.m + d;
            let scale = Rational::from_integer(1.into()) + d;
            data.charges.a_c = data.charges.a_c.iter().map(|a| a * &scale).collect();
        }
        let disc = cross_validate(&c, &view, &data, &cfg).map_err(|e| oracle_failure(view.mode + 1, &e))?;
        ok &= disc.within_tolerance();
        rows.push(json!({
            "mode": disc.mode + 1,
            "vcr_err": disc.vcr_err,
            "rssl_rel_err": disc.rssl_rel_err,
            "rfsl_rel_err": disc.rfsl_rel_err,
            "a_r_err": disc.a_r_err,
            "skipped": disc.skipped,
            "within_tolerance": disc.within_tolerance(),
        }));
    }
    println!("{}", serde_json::to_string_pretty(&json!({ "modes": rows, "ok": ok })).expect("report serializes"));
    if !ok {
        diag::emit("error", "discrepancy", "oracle and analytic results disagree beyond tolerance");
        return Ok(EXIT_DISCREPANCY);
    }
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

fn mean_of(rows: &[scgenie::evolution::GenerationStats], f: impl Fn(&scgenie::evolution::GenerationStats) -> f64) -> Option<f64> {
    (!rows.is_empty()).then(|| rows.iter().map(f).sum::<f64>() / rows.len() as f64)
}

pub fn stats(path: &Path, format: Format) -> Result<u8, CliError> {
    let (pop_path, run) = if path.is_dir() {
        let run = RunDir::open(path).map_err(|e| CliError::input(e.to_string()))?;
        (run.path(POPULATION_FILE), Some(run))
    } else {
        (path.to_path_buf(), None)
    };
    let text = if pop_path.exists() || run.is_none() { diag::read(&pop_path)? } else { String::new() };
    let s = summarize_population(&text);
    for (line, reason) in &s.corrupt {
        diag::emit("warning", "corrupt_line", &format!("{} line {line}: {reason}", pop_path.display()));
    }
    let trace = match &run {
        Some(r) => r.read_stats().map_err(|e| CliError::input(e.to_string()))?,
        None => Vec::new(),
    };
    let rates = json!({
        "generations": trace.len(),
        "syntax_rate": mean_of(&trace, |r| r.syntax_rate),
        "functional_rate": mean_of(&trace, |r| r.functional_rate),
        "novelty_rate": mean_of(&trace, |r| r.novelty_rate),
        "final_functional_rate": trace.last().map(|r| r.functional_rate),
    });
    match format {
        Format::Json => println!(
            "{}",
            json!({
                "count": s.count,
                "corrupt": s.corrupt.len(),
                "min": s.min,
                "max": s.max,
                "mean": s.mean,
                "std": s.std,
                "rates": rates,
            })
        ),
        Format::Csv => {
            let f = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
            let r = |k: &str| rates[k].as_f64().map_or(String::new(), |v| v.to_string());
            println!("count,corrupt,min,max,mean,std,syntax_rate,functional_rate,novelty_rate");
            println!(
                "{},{},{},{},{},{},{},{},{}",
                s.count,
                s.corrupt.len(),
                f(s.min),
                f(s.max),
                f(s.mean),
                f(s.std),
                r("syntax_rate"),
                r("functional_rate"),
                r("novelty_rate")
            );
        }
    }
    if s.corrupt_fraction() > 0.01 {
        diag::emit(
            "error",
            "too_many_corrupt_lines",
            &format!("{} of {} lines are corrupt", s.corrupt.len(), s.lines),
        );
        return Ok(EXIT_INPUT);
    }
    Ok(0)
}

pub fn export(
    path: &Path,
    dot: Option<&Path>,
    sequences: Option<&Path>,
    n: usize,
    circuit_id: u64,
    seed: Option<u64>,
    vocab: &VocabArgs,
) -> Result<u8, CliError> {
    let c = load_converter(path)?;
    let g = to_pin_graph(&c);
    let text = g.to_dot();
    match dot {
        Some(p) => diag::write(p, &text)?,
        None if sequences.is_none() => print!("{text}"),
        None => {}
    }
    if let Some(p) = sequences {
        let vocab = vocabulary(vocab);
        let seed = crate::config::master_seed(seed, None)?;
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let s = euler_encode(&g, &vocab, seed.wrapping_add(i as u64))
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            records.push(SequenceRecord { circuit_id, tokens: s.tokens });
        }
        diag::write(p, &write_jsonl(&records))?;
    }
    Ok(0)
}
