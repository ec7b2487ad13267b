use serde::{Deserialize, Serialize};

use super::{
    select, validate_candidate, EvolutionConfig, EvolutionError, History, Individual, Population, SearchContext,
    ValidationOutcome,
};
use crate::analysis::bounds::NormalizationBounds;
use crate::model::{weighted_batch_sampler, SequenceModel, TrainingBatch};
use crate::topology::{CanonicalForm, Converter, EulerSequence, TokenVocabulary};
use crate::util::derive_seed;

/// One row of `stats.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub n_candidates: usize,
    pub syntax_rate: f64,
    pub functional_rate: f64,
    pub novelty_rate: f64,
    pub best_fom: f64,
    pub mean_fom: f64,
}

impl GenerationStats {
    pub const CSV_HEADER: &'static str =
        "generation,n_candidates,syntax_rate,functional_rate,novelty_rate,best_fom,mean_fom";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.generation,
            self.n_candidates,
            self.syntax_rate,
            self.functional_rate,
            self.novelty_rate,
            self.best_fom,
            self.mean_fom
        )
    }

    pub fn parse_csv_row(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 7 {
            return None;
        }
        Some(Self {
            generation: f[0].parse().ok()?,
            n_candidates: f[1].parse().ok()?,
            syntax_rate: f[2].parse().ok()?,
            functional_rate: f[3].parse().ok()?,
            novelty_rate: f[4].parse().ok()?,
            best_fom: f[5].parse().ok()?,
            mean_fom: f[6].parse().ok()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionState {
    pub population: Population,
    pub history: History,
    pub stats: Vec<GenerationStats>,
    pub next_id: u64,
    pub warmed_up: bool,
}

impl EvolutionState {
    pub fn generation(&self) -> usize {
        self.population.generation
    }
}

pub struct Evolver {
    cfg: EvolutionConfig,
    ctx: SearchContext,
}

impl Evolver {
    pub fn new(cfg: EvolutionConfig, vocab: TokenVocabulary, bounds: NormalizationBounds) -> Result<Self, EvolutionError> {
        let targets = cfg.validate()?;
        Ok(Self { cfg, ctx: SearchContext { vocab, targets, bounds } })
    }

    pub fn config(&self) -> &EvolutionConfig {
        &self.cfg
    }

    pub fn context(&self) -> &SearchContext {
        &self.ctx
    }

    fn check_model(&self, model: &dyn SequenceModel) -> Result<(), EvolutionError> {
        if model.vocab_size() != self.ctx.vocab.size() {
            return Err(EvolutionError::VocabularyMismatch { model: model.vocab_size(), codec: self.ctx.vocab.size() });
        }
        Ok(())
    }

    /// Generation-0 state from functional, pairwise non-isomorphic seeds.
    /// `preload` forms join the history without entering the population.
    pub fn initial_state(&self, seeds: Vec<Converter>, preload: &[CanonicalForm]) -> Result<EvolutionState, EvolutionError> {
        if seeds.is_empty() {
            return Err(EvolutionError::EmptyPopulation);
        }
        let mut individuals: Vec<Individual> = Vec::with_capacity(seeds.len());
        for (i, c) in seeds.into_iter().enumerate() {
            let seed = derive_seed(self.cfg.seed, &[0, 3, i as u64]);
            let ind = Individual::new(i as u64, c, &self.ctx, self.cfg.augmentations, seed, 0)
                .map_err(|reason| EvolutionError::InvalidSeed { index: i, reason })?;
            if let Some(j) = individuals.iter().position(|o| o.canonical == ind.canonical) {
                return Err(EvolutionError::DuplicateSeed { first: j, second: i });
            }
            individuals.push(ind);
        }
        let mut history = History::new();
        for f in preload {
            history.insert(f.clone());
        }
        for ind in &individuals {
            history.insert(ind.canonical.clone());
        }
        let next_id = individuals.len() as u64;
        Ok(EvolutionState {
            population: Population { individuals, generation: 0 },
            history,
            stats: Vec::new(),
            next_id,
            warmed_up: false,
        })
    }

    /// Fitness-weighted optimizer steps over the augmentations of `members`.
    fn finetune(
        &self,
        model: &mut dyn SequenceModel,
        pop: &Population,
        members: &[usize],
        steps: usize,
        seed: u64,
    ) -> Result<Option<f64>, EvolutionError> {
        let mut seqs: Vec<&EulerSequence> = Vec::new();
        let mut fitness = Vec::new();
        for &i in members {
            let ind = &pop.individuals[i];
            for s in &ind.augmentations {
                seqs.push(s);
                fitness.push(ind.fitness);
            }
        }
        if seqs.is_empty() {
            return Ok(None);
        }
        let mut last = None;
        for step in 0..steps {
            let idx = weighted_batch_sampler(
                &fitness,
                self.cfg.beta,
                self.cfg.epsilon,
                self.cfg.batch_size,
                derive_seed(seed, &[step as u64]),
            )?;
            let rows: Vec<EulerSequence> = idx.iter().map(|&i| seqs[i].clone()).collect();
            let weights = idx.iter().map(|&i| fitness[i]).collect();
            let batch = TrainingBatch::new(&rows, weights, model.max_len())?;
            last = Some(model.train_step(&batch)?);
        }
        Ok(last)
    }

    /// Trains on the whole seed population; stands in for pretraining.
    pub fn warmup(&self, model: &mut dyn SequenceModel, state: &mut EvolutionState) -> Result<Option<f64>, EvolutionError> {
        self.check_model(model)?;
        let all: Vec<usize> = (0..state.population.len()).collect();
        let base = model.learning_rate();
        if let (Some(lr), Some(_)) = (self.cfg.warmup_learning_rate, base) {
            model.set_learning_rate(lr);
        }
        let loss = self.finetune(model, &state.population, &all, self.cfg.warmup_steps, derive_seed(self.cfg.seed, &[0, 1]));
        if let Some(lr) = base {
            model.set_learning_rate(lr);
        }
        let loss = loss?;
        state.warmed_up = true;
        Ok(loss)
    }

    fn sample_and_validate(&self, model: &dyn SequenceModel, history: &History, seed: u64) -> Vec<ValidationOutcome> {
        let run = |c: usize| {
            let s = model.sample(self.cfg.temperature, self.cfg.max_sample_len, derive_seed(seed, &[c as u64]));
            validate_candidate(&s, &self.ctx, history)
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..self.cfg.candidates).into_par_iter().map(run).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..self.cfg.candidates).map(run).collect()
        }
    }

    /// Select, finetune, generate, validate and insert: one generation.
    pub fn run_generation(
        &self,
        model: &mut dyn SequenceModel,
        state: &mut EvolutionState,
    ) -> Result<GenerationStats, EvolutionError> {
        self.check_model(model)?;
        if state.population.is_empty() {
            return Err(EvolutionError::EmptyPopulation);
        }
        let g = state.generation() + 1;
        let seed_g = derive_seed(self.cfg.seed, &[g as u64]);
        let pop = &state.population;

        let sel = select(&pop.fitness(), &pop.tie_ranks(), self.cfg.selection(), derive_seed(seed_g, &[0]))?;
        let members: Vec<usize> = sel.all().collect();
        let n_seqs: usize = members.iter().map(|&i| pop.individuals[i].augmentations.len()).sum();
        let steps = self.cfg.finetune_steps.unwrap_or_else(|| n_seqs.div_ceil(self.cfg.batch_size));
        self.finetune(model, pop, &members, steps, derive_seed(seed_g, &[1]))?;

        let outcomes = self.sample_and_validate(model, &state.history, derive_seed(seed_g, &[2]));
        let (mut syntax, mut functional, mut accepted) = (0usize, 0usize, 0usize);
        for (c, out) in outcomes.into_iter().enumerate() {
            syntax += out.syntax_ok() as usize;
            functional += out.functional() as usize;
            if !out.passed() {
                continue;
            }
            let canonical = out.canonical.expect("passed outcome has a form");
            // Earlier candidates of this generation may have claimed the form.
            if !state.history.insert(canonical) {
                continue;
            }
            let converter = out.converter.expect("passed outcome has a converter");
            let ind = Individual::new(
                state.next_id,
                converter,
                &self.ctx,
                self.cfg.augmentations,
                derive_seed(seed_g, &[3, c as u64]),
                g,
            )
            .map_err(EvolutionError::InvalidConfig)?;
            state.next_id += 1;
            state.population.individuals.push(ind);
            accepted += 1;
        }
        self.evict(&mut state.population);
        state.population.generation = g;

        let n = self.cfg.candidates.max(1) as f64;
        let stats = GenerationStats {
            generation: g,
            n_candidates: self.cfg.candidates,
            syntax_rate: syntax as f64 / n,
            functional_rate: functional as f64 / n,
            novelty_rate: accepted as f64 / n,
            best_fom: state.population.best_fitness().unwrap_or(f64::NAN),
            mean_fom: state.population.mean_fitness().unwrap_or(f64::NAN),
        };
        state.stats.push(stats.clone());
        Ok(stats)
    }

    /// Drops the weakest non-elite circuits beyond `max_population`.
    fn evict(&self, pop: &mut Population) {
        let Some(cap) = self.cfg.max_population else { return };
        if pop.len() <= cap {
            return;
        }
        let n_elite = (self.cfg.elite_ratio * pop.len() as f64).ceil() as usize;
        let ranked = pop.ranked();
        let keep_n = cap.max(n_elite);
        let mut keep = vec![false; pop.len()];
        for &i in &ranked[..keep_n.min(ranked.len())] {
            keep[i] = true;
        }
        let mut i = 0;
        pop.individuals.retain(|_| {
            i += 1;
            keep[i - 1]
        });
    }
}

/// Runs generations until `cfg.generations`, resuming from `state`.
/// `on_generation` sees the state and model after every generation (and once
/// after warmup) and may persist them.
pub fn evolve(
    evolver: &Evolver,
    model: &mut dyn SequenceModel,
    state: &mut EvolutionState,
    on_generation: &mut dyn FnMut(&EvolutionState, &dyn SequenceModel, Option<&GenerationStats>) -> Result<(), EvolutionError>,
) -> Result<(), EvolutionError> {
    evolver.check_model(model)?;
    let total = evolver.cfg.generations;
    if total > 0 && !state.warmed_up {
        evolver.warmup(model, state)?;
        on_generation(state, model, None)?;
    }
    while state.generation() < total {
        let stats = evolver.run_generation(model, state)?;
        on_generation(state, model, Some(&stats))?;
    }
    Ok(())
}
