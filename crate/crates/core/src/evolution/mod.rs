//! Evolutionary search: selection, the validation cascade, augmentation and
//! the generation loop.

mod engine;

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::bounds::NormalizationBounds;
use crate::analysis::{analyze_converter, rational, AnalysisError, ConverterReport, Rational};
use crate::model::ModelError;
use crate::topology::converter::MAX_MODES;
use crate::topology::pin_graph::{from_pin_graph, to_pin_graph, SyntaxError};
use crate::topology::{
    canonical_form, euler_decode, euler_encode, CanonicalForm, Converter, DevicePinGraph, EulerError,
    EulerSequence, TokenVocabulary, TRUNCATE,
};
use crate::util::{derive_seed, rng_from};

pub use engine::{evolve, EvolutionState, Evolver, GenerationStats};

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("population is empty")]
    EmptyPopulation,
    #[error("model vocabulary ({model}) does not match the codec vocabulary ({codec})")]
    VocabularyMismatch { model: usize, codec: usize },
    #[error("invalid evolution configuration: {0}")]
    InvalidConfig(String),
    #[error("seed circuit {index} is not usable: {reason}")]
    InvalidSeed { index: usize, reason: String },
    #[error("seed circuits {first} and {second} are isomorphic")]
    DuplicateSeed { first: usize, second: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Euler(#[from] EulerError),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub generations: usize,
    pub candidates: usize,
    pub selection_ratio: f64,
    pub elite_ratio: f64,
    pub tournament_size: usize,
    pub beta: f64,
    pub epsilon: f64,
    pub temperature: f64,
    /// Eulerian traversals stored per accepted circuit.
    pub augmentations: usize,
    /// Target conversion ratio per mode, e.g. `["1/2", "1"]`.
    pub targets: Vec<String>,
    pub batch_size: usize,
    /// Optimizer steps per generation; defaults to one pass over the
    /// selected sequences.
    pub finetune_steps: Option<usize>,
    /// Steps on the seed population before the first generation.
    pub warmup_steps: usize,
    /// Learning rate for the warmup steps; the model's own rate otherwise.
    pub warmup_learning_rate: Option<f64>,
    pub max_sample_len: usize,
    /// Evicts the weakest non-elite circuits beyond this size.
    pub max_population: Option<usize>,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            generations: 500,
            candidates: 256,
            selection_ratio: 0.7,
            elite_ratio: 0.15,
            tournament_size: 3,
            beta: 2.0,
            epsilon: 1e-6,
            temperature: 0.7,
            augmentations: 50,
            targets: vec!["1/2".into(), "1".into()],
            batch_size: 256,
            finetune_steps: None,
            warmup_steps: 0,
            warmup_learning_rate: None,
            max_sample_len: crate::topology::euler::MAX_SEQUENCE_LEN,
            max_population: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub ratio: f64,
    pub elite_ratio: f64,
    pub tournament_size: usize,
}

impl EvolutionConfig {
    pub fn selection(&self) -> SelectionParams {
        SelectionParams {
            ratio: self.selection_ratio,
            elite_ratio: self.elite_ratio,
            tournament_size: self.tournament_size,
        }
    }

    /// Checks the invariants and parses the targets.
    pub fn validate(&self) -> Result<Vec<Rational>, EvolutionError> {
        let bad = |m: String| Err(EvolutionError::InvalidConfig(m));
        if !(self.elite_ratio > 0.0 && self.elite_ratio <= self.selection_ratio && self.selection_ratio <= 1.0) {
            return bad(format!(
                "need 0 < elite_ratio <= selection_ratio <= 1, got {} and {}",
                self.elite_ratio, self.selection_ratio
            ));
        }
        if self.tournament_size == 0 {
            return bad("tournament_size must be at least 1".into());
        }
        if !(self.beta >= 0.0) || !(self.epsilon > 0.0) || !(self.temperature > 0.0) {
            return bad("need beta >= 0, epsilon > 0 and temperature > 0".into());
        }
        if self.batch_size == 0 || self.augmentations == 0 || self.max_sample_len == 0 {
            return bad("batch_size, augmentations and max_sample_len must be positive".into());
        }
        if self.targets.is_empty() || self.targets.len() > MAX_MODES {
            return bad(format!("between 1 and {MAX_MODES} targets required"));
        }
        self.targets
            .iter()
            .map(|t| match rational::parse(t) {
                Some(q) => Ok(q),
                None => Err(EvolutionError::InvalidConfig(format!("bad target ratio {t:?}"))),
            })
            .collect()
    }
}

/// Codec vocabulary, per-mode targets and normalization bounds shared by
/// validation and the engine.
#[derive(Debug, Clone)]
pub struct SearchContext {
    pub vocab: TokenVocabulary,
    pub targets: Vec<Rational>,
    pub bounds: NormalizationBounds,
}

impl SearchContext {
    pub fn n_modes(&self) -> usize {
        self.targets.len()
    }
}

/// Canonical forms of every accepted circuit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    forms: BTreeSet<CanonicalForm>,
}

const HISTORY_MAGIC: &[u8; 8] = b"SCGNHIST";

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when the form was already present.
    pub fn insert(&mut self, form: CanonicalForm) -> bool {
        self.forms.insert(form)
    }

    pub fn contains(&self, form: &CanonicalForm) -> bool {
        self.forms.contains(form)
    }

    pub fn len(&self) -> usize {
        self.forms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CanonicalForm> {
        self.forms.iter()
    }

    /// `magic | count u32 | (len u32 | bytes)*`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = HISTORY_MAGIC.to_vec();
        out.extend_from_slice(&(self.forms.len() as u32).to_le_bytes());
        for f in &self.forms {
            out.extend_from_slice(&(f.as_bytes().len() as u32).to_le_bytes());
            out.extend_from_slice(f.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EvolutionError> {
        let bad = || EvolutionError::Io("corrupt history file".into());
        if bytes.len() < 12 || &bytes[..8] != HISTORY_MAGIC {
            return Err(bad());
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut at = 12;
        let mut forms = BTreeSet::new();
        for _ in 0..n {
            let len = bytes.get(at..at + 4).ok_or_else(bad)?;
            let len = u32::from_le_bytes(len.try_into().unwrap()) as usize;
            let body = bytes.get(at + 4..at + 4 + len).ok_or_else(bad)?;
            forms.insert(CanonicalForm::from_bytes(body.to_vec()));
            at += 4 + len;
        }
        if at != bytes.len() {
            return Err(bad());
        }
        Ok(Self { forms })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: u64,
    pub converter: Converter,
    /// Pin graph of the normalized converter.
    pub graph: DevicePinGraph,
    pub canonical: CanonicalForm,
    pub report: ConverterReport,
    /// Figure of merit; individuals are functional by construction.
    pub fitness: f64,
    pub augmentations: Vec<EulerSequence>,
    pub born: usize,
}

impl Individual {
    /// Analyzes `converter` and stores `n_aug` traversals. Fails unless the
    /// converter is functional with a defined figure of merit.
    pub fn new(
        id: u64,
        converter: Converter,
        ctx: &SearchContext,
        n_aug: usize,
        seed: u64,
        born: usize,
    ) -> Result<Self, String> {
        let converter = converter.normalized();
        let report = analyze_converter(&converter, &ctx.targets, &ctx.bounds).map_err(|e| e.to_string())?;
        let fitness = match (report.functional, report.fom) {
            (true, Some(f)) => f,
            (false, _) => return Err(format!("only {} of {} modes are valid", report.valid_modes(), ctx.n_modes())),
            (true, None) => return Err(format!("no normalization bounds for {:?}", report.missing_bounds)),
        };
        let graph = to_pin_graph(&converter);
        let canonical = canonical_form(&graph);
        let augmentations = augment(&graph, &ctx.vocab, n_aug, seed).map_err(|e| e.to_string())?;
        Ok(Self { id, converter, graph, canonical, report, fitness, augmentations, born })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Population {
    pub individuals: Vec<Individual>,
    pub generation: usize,
}

impl Population {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn fitness(&self) -> Vec<f64> {
        self.individuals.iter().map(|i| i.fitness).collect()
    }

    /// Position of each individual in canonical-form order.
    pub fn tie_ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.individuals[a].canonical.cmp(&self.individuals[b].canonical));
        let mut rank = vec![0; self.len()];
        for (r, i) in order.into_iter().enumerate() {
            rank[i] = r;
        }
        rank
    }

    /// Indices by descending fitness, ties by canonical form.
    pub fn ranked(&self) -> Vec<usize> {
        rank_order(&self.fitness(), &self.tie_ranks())
    }

    pub fn best(&self) -> Option<&Individual> {
        self.ranked().first().map(|&i| &self.individuals[i])
    }

    pub fn best_fitness(&self) -> Option<f64> {
        self.best().map(|i| i.fitness)
    }

    pub fn mean_fitness(&self) -> Option<f64> {
        (!self.is_empty()).then(|| self.fitness().iter().sum::<f64>() / self.len() as f64)
    }
}

fn rank_order(fitness: &[f64], tie_rank: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(tie_rank[a].cmp(&tie_rank[b])));
    order
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub elites: Vec<usize>,
    pub winners: Vec<usize>,
}

impl Selection {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.elites.iter().chain(&self.winners).copied()
    }

    pub fn len(&self) -> usize {
        self.elites.len() + self.winners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Elites by rank, then k-way tournaments over the circuits not yet
/// selected until `ceil(ratio * n)` are chosen. A tournament draws `k`
/// entrants uniformly with replacement; when `k` covers the whole remaining
/// pool the pool itself competes. Ties inside a tournament go to the earlier
/// draw.
pub fn select(
    fitness: &[f64],
    tie_rank: &[usize],
    p: SelectionParams,
    seed: u64,
) -> Result<Selection, EvolutionError> {
    let n = fitness.len();
    if n == 0 {
        return Err(EvolutionError::EmptyPopulation);
    }
    if tie_rank.len() != n {
        return Err(EvolutionError::InvalidConfig("tie_rank length differs from fitness".into()));
    }
    let n_sel = ((p.ratio * n as f64).ceil() as usize).clamp(1, n);
    let n_elite = ((p.elite_ratio * n as f64).ceil() as usize).min(n_sel);
    let order = rank_order(fitness, tie_rank);
    let elites = order[..n_elite].to_vec();
    let mut pool: Vec<usize> = {
        let mut rest = order[n_elite..].to_vec();
        rest.sort_unstable();
        rest
    };
    let mut rng = rng_from(seed);
    let mut winners = Vec::with_capacity(n_sel - n_elite);
    while winners.len() < n_sel - n_elite {
        let pos = if p.tournament_size >= pool.len() {
            (0..pool.len()).fold(0, |best, j| if fitness[pool[j]] > fitness[pool[best]] { j } else { best })
        } else {
            let mut best = rng.gen_range(0..pool.len());
            for _ in 1..p.tournament_size {
                let j = rng.gen_range(0..pool.len());
                if fitness[pool[j]] > fitness[pool[best]] {
                    best = j;
                }
            }
            best
        };
        winners.push(pool.remove(pos));
    }
    Ok(Selection { elites, winners })
}

pub const SYNTAX_LADDER: [f64; 5] = [-3.5, -3.2, -2.9, -2.6, -2.3];
pub const UNIQUENESS_BONUS: f64 = 0.01;
pub const TERMINATION_BONUS: f64 = 0.01;

/// Score of a syntactically valid candidate with `valid` correct modes out
/// of more.
pub fn mode_ladder(valid: usize) -> f64 {
    -2.0 + 0.1 * valid as f64
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValidationFailure {
    /// The token sequence is not a closed walk over known pins.
    Decode(EulerError),
    Syntax(SyntaxError),
    Analysis(AnalysisError),
    NotFunctional { valid_modes: usize },
    MissingBounds(Vec<String>),
    Duplicate,
}

impl ValidationFailure {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Decode(_) => "decode",
            Self::Syntax(_) => "syntax",
            Self::Analysis(_) => "analysis",
            Self::NotFunctional { .. } => "not_functional",
            Self::MissingBounds(_) => "missing_bounds",
            Self::Duplicate => "duplicate",
        }
    }
}

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Decode(e) => write!(f, "{e}"),
            Self::Syntax(e) => write!(f, "{e}"),
            Self::Analysis(e) => write!(f, "{e}"),
            Self::NotFunctional { valid_modes } => write!(f, "{valid_modes} modes match their targets"),
            Self::MissingBounds(t) => write!(f, "no normalization bounds for {}", t.join(", ")),
            Self::Duplicate => f.write_str("isomorphic to a circuit already in the history"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    /// Test at which the cascade stopped (1..=7); 7 on a full pass.
    pub stage: u8,
    pub failure: Option<ValidationFailure>,
    /// The sequence ended with an explicit TRUNCATE.
    pub terminated: bool,
    pub converter: Option<Converter>,
    pub canonical: Option<CanonicalForm>,
    pub report: Option<ConverterReport>,
    pub valid_modes: Option<usize>,
    pub ladder: f64,
}

impl ValidationOutcome {
    pub fn passed(&self) -> bool {
        self.failure.is_none()
    }

    /// Passed tests 1 to 5.
    pub fn syntax_ok(&self) -> bool {
        self.stage >= 6
    }

    /// Passed tests 1 to 6.
    pub fn functional(&self) -> bool {
        self.stage == 7
    }

    fn fail(stage: u8, failure: ValidationFailure, terminated: bool, ladder: f64) -> Self {
        Self {
            stage,
            failure: Some(failure),
            terminated,
            converter: None,
            canonical: None,
            report: None,
            valid_modes: None,
            ladder,
        }
    }
}

/// Runs the seven tests in order, stopping at the first failure. Uniqueness
/// is judged on the normalized converter, so two walks over the same circuit
/// count as one topology. Bonuses apply to functional candidates only: a
/// duplicate scores its figure of merit plus the termination bonus.
pub fn validate_candidate(s: &EulerSequence, ctx: &SearchContext, history: &History) -> ValidationOutcome {
    let terminated = s.tokens.iter().skip_while(|&&t| t == TRUNCATE).any(|&t| t == TRUNCATE);
    let graph = match euler_decode(s, &ctx.vocab) {
        Ok(g) => g,
        Err(e) => return ValidationOutcome::fail(1, ValidationFailure::Decode(e), terminated, SYNTAX_LADDER[0]),
    };
    let converter = match from_pin_graph(&graph, ctx.n_modes()) {
        Ok(c) => c.normalized(),
        Err(e) => {
            let t = e.test_number();
            return ValidationOutcome::fail(t, ValidationFailure::Syntax(e), terminated, SYNTAX_LADDER[t as usize - 1]);
        }
    };
    let report = match analyze_converter(&converter, &ctx.targets, &ctx.bounds) {
        Ok(r) => r,
        Err(e) => return ValidationOutcome::fail(6, ValidationFailure::Analysis(e), terminated, mode_ladder(0)),
    };
    let valid = report.valid_modes();
    let mut out = ValidationOutcome {
        stage: 6,
        failure: None,
        terminated,
        converter: None,
        canonical: None,
        report: None,
        valid_modes: Some(valid),
        ladder: mode_ladder(valid),
    };
    let Some(fom) = report.fom else {
        out.failure = Some(if report.functional {
            ValidationFailure::MissingBounds(report.missing_bounds.clone())
        } else {
            ValidationFailure::NotFunctional { valid_modes: valid }
        });
        out.report = Some(report);
        return out;
    };
    let canonical = canonical_form(&to_pin_graph(&converter));
    let term = if terminated { TERMINATION_BONUS } else { 0.0 };
    out.stage = 7;
    if history.contains(&canonical) {
        out.failure = Some(ValidationFailure::Duplicate);
        out.ladder = fom + term;
    } else {
        out.ladder = fom + UNIQUENESS_BONUS + term;
    }
    out.converter = Some(converter);
    out.canonical = Some(canonical);
    out.report = Some(report);
    out
}

/// `n` distinct functional circuits drawn (seeded) from
/// [`families::toy_cell_variants`] under the context's targets.
pub fn toy_seed_population(ctx: &SearchContext, n: usize, seed: u64) -> Vec<Converter> {
    use rand::seq::SliceRandom;
    let mut seen = BTreeSet::new();
    let mut pool: Vec<Converter> = crate::families::toy_cell_variants()
        .into_iter()
        .filter_map(|c| {
            let c = c.normalized();
            let r = analyze_converter(&c, &ctx.targets, &ctx.bounds).ok()?;
            (r.functional && r.fom.is_some() && seen.insert(canonical_form(&to_pin_graph(&c)))).then_some(c)
        })
        .collect();
    pool.shuffle(&mut rng_from(seed));
    pool.truncate(n);
    pool
}

/// Up to `n` distinct seeded traversals of `g`.
pub fn augment(g: &DevicePinGraph, vocab: &TokenVocabulary, n: usize, seed: u64) -> Result<Vec<EulerSequence>, EulerError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for i in 0..n {
        let s = euler_encode(g, vocab, derive_seed(seed, &[i as u64]))?;
        if seen.insert(s.tokens.clone()) {
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::families;
    use crate::topology::pin_graph::{CapPin, PinNode};
    use crate::topology::{is_isomorphic, VocabConfig};

    fn params(ratio: f64, alpha: f64, k: usize) -> SelectionParams {
        SelectionParams { ratio, elite_ratio: alpha, tournament_size: k }
    }

    pub(crate) fn toy_context() -> SearchContext {
        SearchContext {
            vocab: TokenVocabulary::new(VocabConfig { max_switches: 8, max_caps: 2 }),
            targets: vec![rational::parse("1/2").unwrap(), rational::parse("1").unwrap()],
            bounds: NormalizationBounds::shipped(),
        }
    }

    #[test]
    fn selection_counts() {
        let f: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let ranks: Vec<usize> = (0..100).collect();
        let s = select(&f, &ranks, params(0.7, 0.15, 3), 1).unwrap();
        assert_eq!((s.elites.len(), s.winners.len()), (15, 55));
        let all: BTreeSet<usize> = s.all().collect();
        assert_eq!(all.len(), 70);
        let mut sorted = f.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let elite_min = s.elites.iter().map(|&i| f[i]).fold(f64::INFINITY, f64::min);
        assert_eq!(elite_min, sorted[14]);
        assert!(matches!(select(&[], &[], params(0.7, 0.15, 3), 0), Err(EvolutionError::EmptyPopulation)));
    }

    #[test]
    fn full_pool_tournament_takes_best_remaining() {
        let f = [0.1, 0.9, 0.5, 0.7, 0.3];
        let s = select(&f, &[0, 1, 2, 3, 4], params(0.4, 0.2, 5), 3).unwrap();
        assert_eq!(s.elites, vec![1]);
        assert_eq!(s.winners, vec![3]);
    }

    #[test]
    fn elite_ties_follow_canonical_rank() {
        let f = [0.5, 0.5, 0.5];
        let s = select(&f, &[2, 0, 1], params(0.34, 0.34, 1), 0).unwrap();
        assert_eq!(s.elites, vec![1, 2]);
    }

    #[test]
    fn history_round_trips_and_rejects_corruption() {
        let mut h = History::new();
        assert!(h.insert(CanonicalForm::from_bytes(vec![1, 2, 3])));
        assert!(!h.insert(CanonicalForm::from_bytes(vec![1, 2, 3])));
        h.insert(CanonicalForm::from_bytes(vec![]));
        let b = h.to_bytes();
        assert_eq!(History::from_bytes(&b).unwrap(), h);
        assert!(History::from_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn single_edge_has_one_traversal() {
        let v = TokenVocabulary::new(VocabConfig { max_switches: 2, max_caps: 2 });
        let mut g = DevicePinGraph::new();
        g.add_edge(PinNode::Cap(1, CapPin::Pos), PinNode::Cap(1, CapPin::Neg));
        assert_eq!(augment(&g, &v, 20, 4).unwrap().len(), 1);
    }

    #[test]
    fn halver_augmentations_decode_isomorphic() {
        let ctx = toy_context();
        let g = to_pin_graph(&families::halver());
        let seqs = augment(&g, &ctx.vocab, 50, 9).unwrap();
        assert!(!seqs.is_empty() && seqs.len() <= 50);
        for s in &seqs {
            assert!(is_isomorphic(&euler_decode(s, &ctx.vocab).unwrap(), &g));
        }
    }

    #[test]
    fn seeds_are_distinct_functional_individuals() {
        let ctx = toy_context();
        let seeds = families::toy_seeds();
        assert_eq!(seeds.len(), 10);
        let forms: BTreeSet<CanonicalForm> = seeds
            .into_iter()
            .enumerate()
            .map(|(i, c)| Individual::new(i as u64, c, &ctx, 5, 1, 0).unwrap().canonical)
            .collect();
        assert_eq!(forms.len(), 10);
    }

    #[test]
    fn cascade_stages_and_ladder() {
        let ctx = toy_context();
        let seed = Individual::new(0, families::toy_seeds().remove(0), &ctx, 1, 0, 0).unwrap();
        let mut seq = seed.augmentations[0].clone();
        seq.tokens.push(TRUNCATE);

        let fresh = validate_candidate(&seq, &ctx, &History::new());
        assert!(fresh.passed() && fresh.terminated);
        assert!((fresh.ladder - (seed.fitness + 0.02)).abs() < 1e-12);

        let mut h = History::new();
        h.insert(seed.canonical.clone());
        let dup = validate_candidate(&seq, &ctx, &h);
        assert_eq!((dup.stage, dup.failure), (7, Some(ValidationFailure::Duplicate)));

        let junk = EulerSequence { tokens: vec![1, 2] };
        let out = validate_candidate(&junk, &ctx, &h);
        assert_eq!((out.stage, out.ladder), (1, -3.5));
    }
}
