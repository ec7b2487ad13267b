use std::path::{Path, PathBuf};

use scgenie::evolution::{evolve, toy_seed_population, EvolutionError, Evolver, GenerationStats};
use scgenie::model::ModelError;
use scgenie::store::{RunDir, StoreError};
use scgenie::topology::euler::read_jsonl;
use scgenie::topology::{canonical_form, euler_decode, from_pin_graph, to_pin_graph, CanonicalForm, EulerSequence, TokenVocabulary};

use crate::commands::{load_bounds, load_converter};
use crate::config::{master_seed, RunConfig, SeedSpec};
use crate::diag::{self, CliError, EXIT_INPUT};

pub struct Request {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: bool,
    pub seed: Option<u64>,
    pub generations: Option<usize>,
    pub preload_history: Option<PathBuf>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub halt_after: Option<usize>,
}

fn store_err(e: StoreError) -> CliError {
    match e {
        StoreError::Model(ModelError::Checkpoint(m)) => CliError::new("checkpoint_mismatch", EXIT_INPUT, m),
        StoreError::Evolution(e) => evo_err(e),
        other => CliError::new("store", EXIT_INPUT, other.to_string()),
    }
}

fn evo_err(e: EvolutionError) -> CliError {
    let code = match &e {
        EvolutionError::VocabularyMismatch { .. } => "checkpoint_mismatch",
        EvolutionError::InvalidConfig(_) | EvolutionError::EmptyPopulation => "config",
        EvolutionError::InvalidSeed { .. } | EvolutionError::DuplicateSeed { .. } => "seed_population",
        _ => "evolution",
    };
    CliError::new(code, EXIT_INPUT, e.to_string())
}

fn resolve(req: &Request) -> Result<RunConfig, CliError> {
    let mut cfg = match &req.config {
        Some(p) => RunConfig::from_json(&diag::read(p)?)?,
        None => RunConfig::default(),
    };
    let seed = master_seed(req.seed, cfg.seed)?;
    cfg.seed = Some(seed);
    cfg.evolution.seed = seed;
    if let Some(g) = req.generations {
        cfg.evolution.generations = g;
    }
    if req.preload_history.is_some() {
        cfg.preload_history = req.preload_history.clone();
    }
    if req.threads.is_some() {
        cfg.threads = req.threads;
    }
    cfg.deterministic |= req.deterministic;
    if cfg.checkpoint_every == 0 {
        return Err(CliError::new("config", EXIT_INPUT, "checkpoint_every must be at least 1"));
    }
    Ok(cfg)
}

fn preload(path: &Path, vocab: &TokenVocabulary, n_modes: usize) -> Result<Vec<CanonicalForm>, CliError> {
    let records = read_jsonl(&diag::read(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    records
        .into_iter()
        .map(|r| {
            let bad = |e: String| CliError::input(format!("{} circuit {}: {e}", path.display(), r.circuit_id));
            let g = euler_decode(&EulerSequence { tokens: r.tokens.clone() }, vocab).map_err(|e| bad(e.to_string()))?;
            let c = from_pin_graph(&g, n_modes).map_err(|e| bad(e.to_string()))?;
            Ok(canonical_form(&to_pin_graph(&c.normalized())))
        })
        .collect()
}

pub fn run(req: Request) -> Result<u8, CliError> {
    if req.resume && (req.config.is_some() || req.seed.is_some() || req.generations.is_some() || req.preload_history.is_some()) {
        return Err(CliError::input("--resume takes its configuration from the run directory"));
    }
    let (run, cfg) = if req.resume {
        let run = RunDir::open(&req.out).map_err(store_err)?;
        let cfg: RunConfig = serde_json::from_value(run.config().map_err(store_err)?)
            .map_err(|e| CliError::new("config", EXIT_INPUT, e.to_string()))?;
        (run, cfg)
    } else {
        let cfg = resolve(&req)?;
        // Validate everything before the directory exists.
        Evolver::new(cfg.evolution.clone(), TokenVocabulary::new(cfg.vocab), load_bounds(cfg.bounds.as_deref())?)
            .map_err(evo_err)?;
        (RunDir::create(&req.out, &cfg.to_json()).map_err(store_err)?, cfg)
    };
    crate::init_threads(req.threads.or(cfg.threads), cfg.deterministic || req.deterministic)?;
    let seed = cfg.evolution.seed;
    let vocab = TokenVocabulary::new(cfg.vocab);
    let evolver = Evolver::new(cfg.evolution.clone(), vocab.clone(), load_bounds(cfg.bounds.as_deref())?).map_err(evo_err)?;

    let (mut state, mut model) = if req.resume {
        let (state, model, meta) = run.resume(evolver.context()).map_err(store_err)?;
        if meta.master_seed != seed {
            return Err(CliError::new("checkpoint_mismatch", EXIT_INPUT, "checkpoint seed differs from config.json"));
        }
        diag::emit("info", "resumed", &format!("generation {}", state.generation()));
        (state, model)
    } else {
        let seeds = match &cfg.seeds {
            SeedSpec::Generator { count } => toy_seed_population(evolver.context(), *count, seed),
            SeedSpec::Files { paths } => paths.iter().map(|p| load_converter(p)).collect::<Result<_, _>>()?,
        };
        let pre = match &cfg.preload_history {
            Some(p) => preload(p, &vocab, evolver.context().n_modes())?,
            None => Vec::new(),
        };
        let state = evolver.initial_state(seeds, &pre).map_err(evo_err)?;
        let model = cfg.model.build(vocab.size(), seed).map_err(|e| CliError::new("config", EXIT_INPUT, e.to_string()))?;
        run.write_snapshot(&state).map_err(store_err)?;
        run.save_checkpoint(&state, model.as_ref(), &vocab, seed).map_err(store_err)?;
        (state, model)
    };

    let total = cfg.evolution.generations;
    let every = cfg.checkpoint_every;
    let persist = |st: &scgenie::evolution::EvolutionState,
                       m: &dyn scgenie::model::SequenceModel,
                       stats: Option<&GenerationStats>|
     -> Result<(), StoreError> {
        if let Some(s) = stats {
            run.append_stats(s)?;
            println!("{}", s.csv_row());
        }
        run.write_snapshot(st)?;
        let g = st.generation();
        if stats.is_none() || g % every == 0 || g == total {
            run.save_checkpoint(st, m, &vocab, seed)?;
        }
        if stats.is_some() && req.halt_after == Some(g) {
            return Err(StoreError::Halted(g));
        }
        Ok(())
    };
    let mut failure = None;
    let result = evolve(&evolver, model.as_mut(), &mut state, &mut |st, m, stats| {
        persist(st, m, stats).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            EvolutionError::InvalidConfig(msg)
        })
    });
    match failure {
        Some(StoreError::Halted(g)) => {
            diag::emit("info", "halted", &format!("stopped after generation {g}"));
            return Ok(130);
        }
        Some(e) => return Err(store_err(e)),
        None => {}
    }
    result.map_err(evo_err)?;
    diag::emit(
        "info",
        "finished",
        &format!(
            "generation {}, population {}, history {}, best fom {}",
            state.generation(),
            state.population.len(),
            state.history.len(),
            state.population.best_fitness().map_or("none".into(), |f| f.to_string())
        ),
    );
    Ok(0)
}
