use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_scgenie"));
    c.env_remove("SCGENIE_SEED");
    c
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../golden").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr_json(o: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&o.stderr).lines().map(|l| serde_json::from_str(l).expect("stderr is JSON lines")).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let ok = run(&["analyze", s(&golden("halver.json")), "--targets", "1/2", "--out-dir", out]);
    assert_eq!(code(&ok), 0);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("halver.report.json")).unwrap()).unwrap();
    assert_eq!(report["modes"][0]["m"], "1/2");
    assert_eq!(report["modes"][0]["m_ssl"], "8");
    assert_eq!(report["modes"][0]["m_fsl"], "1/8");
    assert!(dir.path().join("halver.report.csv").exists());

    let wrong = run(&["analyze", s(&golden("halver.json")), "--targets", "1/3", "--out-dir", out]);
    assert_eq!(code(&wrong), 2);

    let third = run(&["analyze", s(&golden("one_third.json")), "--targets", "1/3", "--out-dir", out]);
    assert_eq!(code(&third), 0);

    let text = std::fs::read_to_string(golden("halver.json")).unwrap();
    let trunc = dir.path().join("trunc.json");
    std::fs::write(&trunc, &text[..text.len() / 2]).unwrap();
    let bad = run(&["analyze", s(&trunc), "--targets", "1/2", "--out-dir", out]);
    assert_eq!(code(&bad), 1);
    let diag = stderr_json(&bad);
    assert_eq!(diag[0]["code"], "malformed_input");
    assert!(diag[0]["message"].as_str().unwrap().contains("malformed document"));

    let no_bounds = run(&["analyze", s(&golden("halver.json")), "--targets", "1/2", "--bounds", "/nonexistent.json"]);
    assert_eq!(code(&no_bounds), 1);
}

#[test]
fn oracle_check_passes_and_catches_injected_errors() {
    let ok = run(&["oracle-check", s(&golden("halver.json"))]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let report: Value = serde_json::from_slice(&ok.stdout).unwrap();
    let m = &report["modes"][0];
    assert!(m["vcr_err"].as_f64().unwrap() < 1e-9);
    assert!(m["rssl_rel_err"].as_f64().unwrap() < 5e-3);
    assert!(m["rfsl_rel_err"].as_f64().unwrap() < 5e-3);

    let wrong = run(&["oracle-check", s(&golden("halver.json")), "--inject-error", "1/1000"]);
    assert_eq!(code(&wrong), 4);
    assert_eq!(stderr_json(&wrong)[0]["code"], "discrepancy");
}

#[test]
fn oracle_check_reports_non_posed_converters() {
    // The capacitor never conducts: its voltage is undetermined.
    let doc = r#"{"version": 1, "n_modes": 1, "ports": {"vin": "VIN", "vout": "VOUT", "gnd": "GND"},
        "switches": [{"id": 1, "a": "VIN", "b": "VOUT", "ctrl": "11"},
                     {"id": 2, "a": "p", "b": "VOUT", "ctrl": "00"},
                     {"id": 3, "a": "VOUT", "b": "GND", "ctrl": "00"}],
        "capacitors": [{"id": 1, "p": "p", "n": "GND"}]}"#;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("floating.json");
    std::fs::write(&p, doc).unwrap();
    let o = run(&["oracle-check", s(&p)]);
    assert_eq!(code(&o), 3);
    let d = &stderr_json(&o)[0];
    assert!(d["code"] == "singular_system" || d["code"] == "no_convergence", "{d}");
}

#[test]
fn export_and_validate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seqs = dir.path().join("s.jsonl");
    let dot = dir.path().join("g.dot");
    let o = run(&[
        "export",
        s(&golden("halver.json")),
        "--dot",
        s(&dot),
        "--sequences",
        s(&seqs),
        "-n",
        "3",
        "--seed",
        "0",
        "--circuit-id",
        "1",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(&seqs).unwrap(), std::fs::read(golden("halver.sequences.jsonl")).unwrap());
    assert!(std::fs::read_to_string(&dot).unwrap().starts_with("graph"));

    let v = run(&["validate", s(&seqs), "--targets", "1/2"]);
    assert_eq!(code(&v), 0);
    let lines: Vec<Value> = String::from_utf8_lossy(&v.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["stage"] == 7 && l["canonical"] == lines[0]["canonical"]));

    let v = run(&["validate", s(&seqs), "--targets", "1/3"]);
    assert_eq!(code(&v), 2);
}

#[test]
fn stats_moments_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.jsonl");
    std::fs::write(&p, "{\"fitness\":0.1}\n{\"fitness\":0.2}\n{\"fitness\":0.3}\n").unwrap();
    let o = run(&["stats", s(&p)]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["count"], 3);
    assert!((v["mean"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    assert!((v["std"].as_f64().unwrap() - 0.08165).abs() < 1e-5);

    std::fs::write(&p, "{\"fitness\":0.263}\n").unwrap();
    let v: Value = serde_json::from_slice(&run(&["stats", s(&p)]).stdout).unwrap();
    assert_eq!((v["min"].as_f64(), v["max"].as_f64(), v["std"].as_f64()), (Some(0.263), Some(0.263), Some(0.0)));

    std::fs::write(&p, "").unwrap();
    let o = run(&["stats", s(&p)]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["count"], 0);
    assert!(v["mean"].is_null());

    std::fs::write(&p, "{\"fitness\":0.1}\n{\"fitness\":\n").unwrap();
    let o = run(&["stats", s(&p)]);
    assert_eq!(code(&o), 1);
    let diag = stderr_json(&o);
    assert_eq!(diag[0]["code"], "corrupt_line");
    assert!(diag[0]["message"].as_str().unwrap().contains("line 2"));
}

const TOY: &str = r#"{
  "seed": 5,
  "checkpoint_every": 2,
  "model": {"kind": "ngram", "order": 10, "alpha": 0.01},
  "evolution": {"generations": 6, "candidates": 24, "augmentations": 6, "batch_size": 16,
                "warmup_steps": 100, "temperature": 1.0, "max_sample_len": 256}
}"#;

fn toy_config(dir: &Path) -> PathBuf {
    let p = dir.join("toy.json");
    std::fs::write(&p, TOY).unwrap();
    p
}

fn stats_rows(run_dir: &Path) -> Vec<String> {
    std::fs::read_to_string(run_dir.join("stats.csv")).unwrap_or_default().lines().skip(1).map(String::from).collect()
}

#[test]
fn evolve_with_zero_generations_writes_an_empty_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = run(&["evolve", s(&toy_config(dir.path())), "--out", s(&out), "--generations", "0"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(out.join("stats.csv")).unwrap().lines().count(), 1);
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 5);
    assert_eq!(cfg["evolution"]["generations"], 0);
    assert_eq!(std::fs::read_to_string(out.join("population.jsonl")).unwrap().lines().count(), 10);
    let summary: Value = serde_json::from_slice(&run(&["stats", s(&out)]).stdout).unwrap();
    assert_eq!(summary["count"], 10);
    // A second run into the same directory is refused.
    let again = run(&["evolve", s(&toy_config(dir.path())), "--out", s(&out)]);
    assert_eq!(code(&again), 1);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = bin().args(["evolve", "--out", s(&out), "--generations", "0"]).env("SCGENIE_SEED", "42").output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg: Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 42);
}

#[test]
fn resume_after_halt_reproduces_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let full = dir.path().join("full");
    assert_eq!(code(&run(&["--deterministic", "evolve", s(&cfg), "--out", s(&full)])), 0);
    let expected = stats_rows(&full);
    // The trace must be informative for the comparison to mean anything.
    let functional: Vec<f64> = expected.iter().map(|r| r.split(',').nth(3).unwrap().parse().unwrap()).collect();
    assert!(functional.iter().any(|&f| f > 0.0 && f < 1.0), "{functional:?}");

    let cut = dir.path().join("cut");
    let o = run(&["--deterministic", "evolve", s(&cfg), "--out", s(&cut), "--halt-after", "3"]);
    assert_eq!(code(&o), 130);
    assert_eq!(stats_rows(&cut).len(), 3);
    // Generation 3 is past the last checkpoint (2), so it is recomputed.
    let o = run(&["--deterministic", "evolve", "--out", s(&cut), "--resume"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stats_rows(&cut), expected);
    assert_eq!(
        std::fs::read(cut.join("population.jsonl")).unwrap(),
        std::fs::read(full.join("population.jsonl")).unwrap()
    );
}

#[test]
fn resume_after_kill_reproduces_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path());
    let full = dir.path().join("full");
    let o = run(&["--deterministic", "evolve", s(&cfg), "--out", s(&full)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let expected = stats_rows(&full);
    assert_eq!(expected.len(), 6);

    let cut = dir.path().join("cut");
    let mut child = bin()
        .args(["--deterministic", "evolve", s(&cfg), "--out", s(&cut)])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let t = Instant::now();
    while stats_rows(&cut).len() < 3 && t.elapsed() < Duration::from_secs(120) {
        if child.try_wait().unwrap().is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(2));
    }
    let _ = child.kill();
    child.wait().unwrap();

    let o = run(&["--deterministic", "evolve", "--out", s(&cut), "--resume"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stats_rows(&cut), expected);
    assert_eq!(
        std::fs::read(cut.join("population.jsonl")).unwrap(),
        std::fs::read(full.join("population.jsonl")).unwrap()
    );
    assert_eq!(std::fs::read(cut.join("history.bin")).unwrap(), std::fs::read(full.join("history.bin")).unwrap());
}
