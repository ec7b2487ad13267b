//! Run directory persistence.
//!
//! ```text
//! run/
//!   config.json        resolved configuration, written once
//!   population.jsonl   current population, one record per line
//!   history.bin        canonical-form set
//!   stats.csv          one row per finished generation
//!   reports/<id>.json  analysis report of every admitted circuit
//!   checkpoints/gen-NNNNNN/
//!     model.ckpt  population.jsonl  history.bin  state.json
//! ```
//!
//! A checkpoint directory is built under a temporary name and renamed into
//! place, so any `gen-*` directory is complete.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::analyze_converter;
use crate::evolution::{
    EvolutionError, EvolutionState, GenerationStats, History, Individual, Population, SearchContext,
};
use crate::model::{load_checkpoint, save_checkpoint, ModelError, SequenceModel};
use crate::topology::{canonical_form, to_pin_graph, Converter, ConverterDocument, EulerSequence, TokenVocabulary};

pub const CONFIG_FILE: &str = "config.json";
pub const POPULATION_FILE: &str = "population.jsonl";
pub const HISTORY_FILE: &str = "history.bin";
pub const STATS_FILE: &str = "stats.csv";
pub const REPORTS_DIR: &str = "reports";
pub const CHECKPOINTS_DIR: &str = "checkpoints";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0} already holds a run; pass --resume or choose another directory")]
    Exists(PathBuf),
    #[error("{0} is not a run directory")]
    NotARun(PathBuf),
    #[error("no checkpoint in {0}")]
    NoCheckpoint(PathBuf),
    #[error("corrupt {file} line {line}: {reason}")]
    Corrupt { file: String, line: usize, reason: String },
    /// Raised by callers that stop a run on purpose.
    #[error("halted after generation {0}")]
    Halted(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// One line of `population.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub id: u64,
    pub canonical: String,
    pub fitness: f64,
    pub born: usize,
    pub report: String,
    pub converter: ConverterDocument,
    pub augmentations: Vec<Vec<u32>>,
}

impl PopulationRecord {
    pub fn from_individual(ind: &Individual) -> Self {
        Self {
            id: ind.id,
            canonical: ind.canonical.hex(),
            fitness: ind.fitness,
            born: ind.born,
            report: report_path(ind.id),
            converter: ind.converter.to_document(),
            augmentations: ind.augmentations.iter().map(|s| s.tokens.clone()).collect(),
        }
    }

    /// Re-analyzes the converter and checks the stored form and fitness.
    pub fn into_individual(self, ctx: &SearchContext) -> Result<Individual, String> {
        let converter = Converter::from_document(self.converter).map_err(|e| e.to_string())?;
        let report = analyze_converter(&converter, &ctx.targets, &ctx.bounds).map_err(|e| e.to_string())?;
        let graph = to_pin_graph(&converter);
        let canonical = canonical_form(&graph);
        if canonical.hex() != self.canonical {
            return Err("canonical form does not match the converter".into());
        }
        match report.fom {
            Some(f) if report.functional && f.to_bits() == self.fitness.to_bits() => {}
            _ => return Err("fitness does not match the analysis".into()),
        }
        let augmentations = self.augmentations.into_iter().map(|tokens| EulerSequence { tokens }).collect();
        Ok(Individual {
            id: self.id,
            converter,
            graph,
            canonical,
            report,
            fitness: self.fitness,
            augmentations,
            born: self.born,
        })
    }
}

pub fn report_path(id: u64) -> String {
    format!("{REPORTS_DIR}/{id}.json")
}

pub fn population_jsonl(pop: &Population) -> String {
    let mut out = String::new();
    for ind in &pop.individuals {
        out.push_str(&serde_json::to_string(&PopulationRecord::from_individual(ind)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_population(text: &str, ctx: &SearchContext, generation: usize) -> Result<Population, StoreError> {
    let mut individuals = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |reason: String| StoreError::Corrupt { file: POPULATION_FILE.into(), line: i + 1, reason };
        let rec: PopulationRecord = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        individuals.push(rec.into_individual(ctx).map_err(corrupt)?);
    }
    Ok(Population { individuals, generation })
}

/// Bookkeeping that is not recoverable from the population itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointState {
    pub generation: usize,
    pub next_id: u64,
    pub warmed_up: bool,
    /// Every random stream is derived from this and the generation index.
    pub master_seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates a fresh run directory and writes `config`.
    pub fn create(root: impl AsRef<Path>, config: &serde_json::Value) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        if root.join(CONFIG_FILE).exists() {
            return Err(StoreError::Exists(root));
        }
        for d in [root.clone(), root.join(REPORTS_DIR), root.join(CHECKPOINTS_DIR)] {
            fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
        let run = Self { root };
        let text = serde_json::to_string_pretty(config).expect("config serializes") + "\n";
        write_atomic(&run.path(CONFIG_FILE), text.as_bytes())?;
        write_atomic(&run.path(STATS_FILE), format!("{}\n", GenerationStats::CSV_HEADER).as_bytes())?;
        Ok(run)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        if !root.join(CONFIG_FILE).is_file() {
            return Err(StoreError::NotARun(root));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config(&self) -> Result<serde_json::Value, StoreError> {
        let p = self.path(CONFIG_FILE);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        serde_json::from_str(&text)
            .map_err(|e| StoreError::Corrupt { file: CONFIG_FILE.into(), line: e.line(), reason: e.to_string() })
    }

    pub fn append_stats(&self, s: &GenerationStats) -> Result<(), StoreError> {
        let p = self.path(STATS_FILE);
        let mut f = fs::OpenOptions::new().append(true).open(&p).map_err(io_err(&p))?;
        writeln!(f, "{}", s.csv_row()).map_err(io_err(&p))?;
        f.sync_data().map_err(io_err(&p))
    }

    pub fn read_stats(&self) -> Result<Vec<GenerationStats>, StoreError> {
        let p = self.path(STATS_FILE);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        text.lines()
            .enumerate()
            .skip(1)
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                GenerationStats::parse_csv_row(l).ok_or_else(|| StoreError::Corrupt {
                    file: STATS_FILE.into(),
                    line: i + 1,
                    reason: "expected 7 numeric fields".into(),
                })
            })
            .collect()
    }

    fn write_stats(&self, stats: &[GenerationStats]) -> Result<(), StoreError> {
        let mut text = format!("{}\n", GenerationStats::CSV_HEADER);
        for s in stats {
            text.push_str(&s.csv_row());
            text.push('\n');
        }
        write_atomic(&self.path(STATS_FILE), text.as_bytes())
    }

    /// Rewrites the live population and history and adds missing reports.
    pub fn write_snapshot(&self, state: &EvolutionState) -> Result<(), StoreError> {
        for ind in &state.population.individuals {
            let p = self.path(&report_path(ind.id));
            if !p.exists() {
                let text = serde_json::to_string_pretty(&ind.report.to_json()).expect("report serializes") + "\n";
                write_atomic(&p, text.as_bytes())?;
            }
        }
        write_atomic(&self.path(POPULATION_FILE), population_jsonl(&state.population).as_bytes())?;
        write_atomic(&self.path(HISTORY_FILE), &state.history.to_bytes())
    }

    fn checkpoint_dir(&self, generation: usize) -> PathBuf {
        self.path(CHECKPOINTS_DIR).join(format!("gen-{generation:06}"))
    }

    pub fn save_checkpoint(
        &self,
        state: &EvolutionState,
        model: &dyn SequenceModel,
        vocab: &TokenVocabulary,
        master_seed: u64,
    ) -> Result<PathBuf, StoreError> {
        let dir = self.checkpoint_dir(state.generation());
        let tmp = dir.with_extension("partial");
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
        }
        fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
        let put = |name: &str, bytes: &[u8]| {
            let p = tmp.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))
        };
        put("model.ckpt", &save_checkpoint(model, vocab))?;
        put(POPULATION_FILE, population_jsonl(&state.population).as_bytes())?;
        put(HISTORY_FILE, &state.history.to_bytes())?;
        let meta = CheckpointState {
            generation: state.generation(),
            next_id: state.next_id,
            warmed_up: state.warmed_up,
            master_seed,
        };
        put("state.json", serde_json::to_string_pretty(&meta).expect("state serializes").as_bytes())?;
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::rename(&tmp, &dir).map_err(io_err(&dir))?;
        Ok(dir)
    }

    /// Complete checkpoint directories by generation, oldest first.
    pub fn checkpoints(&self) -> Result<Vec<(usize, PathBuf)>, StoreError> {
        let root = self.path(CHECKPOINTS_DIR);
        let mut out = Vec::new();
        for entry in fs::read_dir(&root).map_err(io_err(&root))? {
            let entry = entry.map_err(io_err(&root))?;
            let name = entry.file_name();
            let Some(g) = name.to_str().and_then(|n| n.strip_prefix("gen-")).and_then(|n| n.parse().ok()) else {
                continue;
            };
            out.push((g, entry.path()));
        }
        out.sort();
        Ok(out)
    }

    /// Restores the newest checkpoint and truncates `stats.csv` to match it.
    pub fn resume(
        &self,
        ctx: &SearchContext,
    ) -> Result<(EvolutionState, Box<dyn SequenceModel>, CheckpointState), StoreError> {
        let (_, dir) = self.checkpoints()?.pop().ok_or_else(|| StoreError::NoCheckpoint(self.root.clone()))?;
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(io_err(&p))
        };
        let meta: CheckpointState = serde_json::from_slice(&read("state.json")?)
            .map_err(|e| StoreError::Corrupt { file: "state.json".into(), line: e.line(), reason: e.to_string() })?;
        let model = load_checkpoint(&read("model.ckpt")?, &ctx.vocab)?;
        let pop_text = String::from_utf8(read(POPULATION_FILE)?).map_err(|e| StoreError::Corrupt {
            file: POPULATION_FILE.into(),
            line: 0,
            reason: e.to_string(),
        })?;
        let population = parse_population(&pop_text, ctx, meta.generation)?;
        let history = History::from_bytes(&read(HISTORY_FILE)?)?;
        let mut stats = self.read_stats()?;
        stats.retain(|s| s.generation <= meta.generation);
        if stats.len() != meta.generation {
            return Err(StoreError::Corrupt {
                file: STATS_FILE.into(),
                line: stats.len() + 1,
                reason: format!("{} rows cover a checkpoint at generation {}", stats.len(), meta.generation),
            });
        }
        self.write_stats(&stats)?;
        let state = EvolutionState { population, history, stats, next_id: meta.next_id, warmed_up: meta.warmed_up };
        self.write_snapshot(&state)?;
        Ok((state, model, meta))
    }
}

/// FoM moments over a population file; corrupt lines are collected, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationSummary {
    pub count: usize,
    pub lines: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    /// Population (not sample) standard deviation.
    pub std: Option<f64>,
    pub corrupt: Vec<(usize, String)>,
}

impl PopulationSummary {
    pub fn corrupt_fraction(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            self.corrupt.len() as f64 / self.lines as f64
        }
    }
}

#[derive(Deserialize)]
struct FitnessOnly {
    fitness: f64,
}

pub fn summarize_population(text: &str) -> PopulationSummary {
    let mut values = Vec::new();
    let mut corrupt = Vec::new();
    let mut lines = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        match serde_json::from_str::<FitnessOnly>(line) {
            Ok(r) if r.fitness.is_finite() => values.push(r.fitness),
            Ok(_) => corrupt.push((i + 1, "fitness is not finite".to_string())),
            Err(e) => corrupt.push((i + 1, e.to_string())),
        }
    }
    let n = values.len();
    let (mut min, mut max, mut mean, mut std) = (None, None, None, None);
    if n > 0 {
        let m = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        min = values.iter().copied().reduce(f64::min);
        max = values.iter().copied().reduce(f64::max);
        mean = Some(m);
        std = Some(var.sqrt());
    }
    PopulationSummary { count: n, lines, min, max, mean, std, corrupt }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::tests::toy_context;
    use crate::evolution::{evolve, EvolutionConfig, Evolver};
    use crate::families;
    use crate::model::{NgramConfig, NgramModel};

    #[test]
    fn summary_of_three_values() {
        let text = "{\"fitness\":0.1}\n{\"fitness\":0.2}\n\n{\"fitness\":0.3}\n";
        let s = summarize_population(text);
        assert_eq!(s.count, 3);
        assert!((s.mean.unwrap() - 0.2).abs() < 1e-15);
        assert!((s.std.unwrap() - 0.081_649_658_092_772_6).abs() < 1e-12);
        assert_eq!((s.min, s.max), (Some(0.1), Some(0.3)));
    }

    #[test]
    fn summary_flags_corrupt_lines() {
        let s = summarize_population("{\"fitness\":0.263}\nnot json\n");
        assert_eq!(s.count, 1);
        assert_eq!(s.std, Some(0.0));
        assert_eq!(s.corrupt.len(), 1);
        assert_eq!(s.corrupt[0].0, 2);
        assert_eq!(summarize_population("").mean, None);
    }

    #[test]
    fn population_records_round_trip() {
        let ctx = toy_context();
        let ind = Individual::new(4, families::toy_seeds().remove(0), &ctx, 3, 9, 2).unwrap();
        let pop = Population { individuals: vec![ind], generation: 2 };
        let back = parse_population(&population_jsonl(&pop), &ctx, 2).unwrap();
        assert_eq!(back, pop);
        let tampered = population_jsonl(&pop).replace("\"fitness\":", "\"fitness\":1");
        assert!(matches!(parse_population(&tampered, &ctx, 2), Err(StoreError::Corrupt { line: 1, .. })));
    }

    fn run(dir: &Path, gens: usize, stop_at: Option<usize>, resume: bool) -> Vec<GenerationStats> {
        let ctx = toy_context();
        let cfg = EvolutionConfig {
            generations: gens,
            candidates: 12,
            augmentations: 6,
            batch_size: 16,
            warmup_steps: 10,
            max_sample_len: 256,
            seed: 11,
            ..EvolutionConfig::default()
        };
        let e = Evolver::new(cfg.clone(), ctx.vocab.clone(), ctx.bounds.clone()).unwrap();
        let (rd, mut state, mut model): (RunDir, EvolutionState, Box<dyn SequenceModel>) = if resume {
            let rd = RunDir::open(dir).unwrap();
            let (s, m, _) = rd.resume(e.context()).unwrap();
            (rd, s, m)
        } else {
            let rd = RunDir::create(dir, &serde_json::json!({"seed": 11})).unwrap();
            let s = e.initial_state(families::toy_seeds(), &[]).unwrap();
            let m = NgramModel::new(NgramConfig { order: 6, alpha: 0.05, ..NgramConfig::new(ctx.vocab.size()) }).unwrap();
            (rd, s, Box::new(m))
        };
        let res = evolve(&e, model.as_mut(), &mut state, &mut |st, m, stats| {
            if let Some(s) = stats {
                rd.append_stats(s).unwrap();
            }
            rd.write_snapshot(st).unwrap();
            if st.generation() % 2 == 0 {
                rd.save_checkpoint(st, m, &ctx.vocab, 11).unwrap();
            }
            if Some(st.generation()) == stop_at {
                return Err(EvolutionError::InvalidConfig("interrupted".into()));
            }
            Ok(())
        });
        assert_eq!(res.is_err(), stop_at.is_some());
        rd.read_stats().unwrap()
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_trace() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let full = run(a.path(), 4, None, false);
        assert_eq!(full.len(), 4);
        // Killed after generation 3 was recorded; the last checkpoint is at 2.
        assert_eq!(run(b.path(), 4, Some(3), false).len(), 3);
        let resumed = run(b.path(), 4, None, true);
        assert_eq!(resumed, full);
        let pa = fs::read_to_string(a.path().join(POPULATION_FILE)).unwrap();
        let pb = fs::read_to_string(b.path().join(POPULATION_FILE)).unwrap();
        assert_eq!(pa, pb);
        assert!(RunDir::create(a.path(), &serde_json::json!({})).is_err());
    }
}
