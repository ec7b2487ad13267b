use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use scgenie::evolution::EvolutionConfig;
use scgenie::model::{NgramConfig, NgramModel, ModelError, SequenceModel, Transformer, TransformerConfig};
use scgenie::topology::VocabConfig;
use scgenie::util::derive_seed;

use crate::diag::CliError;

pub const SEED_ENV: &str = "SCGENIE_SEED";

/// Flag, then config file, then `SCGENIE_SEED`, then 0.
pub fn master_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::input(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerSpec {
    pub max_len: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
}

impl Default for TransformerSpec {
    fn default() -> Self {
        let c = TransformerConfig::new(2);
        Self {
            max_len: c.max_len,
            layers: c.layers,
            heads: c.heads,
            d_model: c.d_model,
            learning_rate: c.learning_rate,
            weight_decay: c.weight_decay,
            beta1: c.beta1,
            beta2: c.beta2,
            adam_eps: c.adam_eps,
            grad_clip: c.grad_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramSpec {
    pub order: usize,
    pub alpha: f64,
    pub max_len: usize,
}

impl Default for NgramSpec {
    fn default() -> Self {
        let c = NgramConfig::new(2);
        Self { order: c.order, alpha: c.alpha, max_len: c.max_len }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Transformer(TransformerSpec),
    Ngram(NgramSpec),
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::Transformer(TransformerSpec::default())
    }
}

impl ModelSpec {
    pub fn build(&self, vocab_size: usize, seed: u64) -> Result<Box<dyn SequenceModel>, ModelError> {
        Ok(match self {
            Self::Transformer(t) => Box::new(Transformer::new(TransformerConfig {
                vocab_size,
                max_len: t.max_len,
                layers: t.layers,
                heads: t.heads,
                d_model: t.d_model,
                learning_rate: t.learning_rate,
                weight_decay: t.weight_decay,
                beta1: t.beta1,
                beta2: t.beta2,
                adam_eps: t.adam_eps,
                grad_clip: t.grad_clip,
                seed: derive_seed(seed, &[u64::MAX]),
            })?),
            Self::Ngram(n) => {
                Box::new(NgramModel::new(NgramConfig { vocab_size, order: n.order, alpha: n.alpha, max_len: n.max_len })?)
            }
        })
    }
}

/// Where generation 0 comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeedSpec {
    /// Series-parallel cell variants filtered to the targets.
    Generator { count: usize },
    /// Converter documents.
    Files { paths: Vec<PathBuf> },
}

impl Default for SeedSpec {
    fn default() -> Self {
        Self::Generator { count: 10 }
    }
}

/// Everything `evolve` needs; written verbatim to `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub vocab: VocabConfig,
    /// Normalization bounds JSON; the shipped table when absent.
    pub bounds: Option<PathBuf>,
    pub seeds: SeedSpec,
    pub preload_history: Option<PathBuf>,
    /// Checkpoint every this many generations (and always after the last).
    pub checkpoint_every: usize,
    pub model: ModelSpec,
    pub evolution: EvolutionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: None,
            deterministic: false,
            vocab: VocabConfig { max_switches: 8, max_caps: 2 },
            bounds: None,
            seeds: SeedSpec::default(),
            preload_history: None,
            checkpoint_every: 10,
            model: ModelSpec::default(),
            evolution: EvolutionConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::new("config", crate::diag::EXIT_INPUT, e.to_string()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
