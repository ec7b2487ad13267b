//! Autoregressive token models over Euler sequences.

mod linalg;
pub mod ngram;
pub mod transformer;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{EulerSequence, TokenVocabulary, TRUNCATE};
use crate::util::rng_from;

pub use ngram::{NgramConfig, NgramModel};
pub use transformer::{Transformer, TransformerConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("token {token} is outside the vocabulary of size {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("population is empty")]
    EmptyPopulation,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("checkpoint vocabulary does not match the codec vocabulary")]
    VocabularyMismatch,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Transformer,
    Ngram,
}

/// Uniform-length token rows with per-row weight metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    /// Each row is a sequence body followed by TRUNCATE padding.
    pub sequences: Vec<Vec<u32>>,
    pub weights: Vec<f64>,
}

impl TrainingBatch {
    /// Pads every body to one more than the longest (room for the terminator),
    /// capped at `max_len`.
    pub fn new(seqs: &[EulerSequence], weights: Vec<f64>, max_len: usize) -> Result<Self, ModelError> {
        if seqs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let width = (seqs.iter().map(|s| s.body().len()).max().unwrap_or(0) + 1).min(max_len);
        let sequences = seqs
            .iter()
            .map(|s| {
                let mut row = s.body().to_vec();
                row.resize(width, TRUNCATE);
                row
            })
            .collect();
        Ok(Self { sequences, weights })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn width(&self) -> usize {
        self.sequences.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, vocab: usize) -> Result<(), ModelError> {
        if self.is_empty() || self.width() == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let w = self.width();
        for row in &self.sequences {
            if row.len() != w {
                return Err(ModelError::InvalidConfig("batch rows differ in length".into()));
            }
            if let Some(&token) = row.iter().find(|&&t| t as usize >= vocab) {
                return Err(ModelError::TokenOutOfRange { token, vocab });
            }
        }
        Ok(())
    }
}

/// Model input and target at each position of a row: the input is the
/// previous token (TRUNCATE at the start), and targets after the first
/// TRUNCATE are masked out.
pub(crate) fn frame(row: &[u32]) -> (Vec<u32>, Vec<Option<u32>>) {
    let mut inputs = Vec::with_capacity(row.len());
    let mut targets = Vec::with_capacity(row.len());
    let mut ended = false;
    for (t, &tok) in row.iter().enumerate() {
        inputs.push(if t == 0 { TRUNCATE } else { row[t - 1] });
        targets.push(if ended { None } else { Some(tok) });
        if tok == TRUNCATE {
            ended = true;
        }
    }
    (inputs, targets)
}

pub trait SequenceModel: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn vocab_size(&self) -> usize;
    fn max_len(&self) -> usize;

    /// Distribution of the next token after `context` (body tokens so far),
    /// softened by `temperature`.
    fn next_token_distribution(&self, context: &[u32], temperature: f64) -> Vec<f64>;

    /// Mean next-token negative log-likelihood without updating.
    fn evaluate(&self, batch: &TrainingBatch) -> Result<f64, ModelError>;

    /// One optimization step; returns the loss before the update.
    fn train_step(&mut self, batch: &TrainingBatch) -> Result<f64, ModelError>;

    /// Draws body tokens until TRUNCATE (kept as the final token) or until
    /// `max_len` body tokens.
    fn sample(&self, temperature: f64, max_len: usize, seed: u64) -> EulerSequence {
        let mut rng = rng_from(seed);
        let mut tokens = Vec::new();
        while tokens.len() < max_len.min(self.max_len()) {
            let p = self.next_token_distribution(&tokens, temperature);
            let t = draw(&p, &mut rng);
            if t == TRUNCATE {
                tokens.push(t);
                break;
            }
            tokens.push(t);
        }
        EulerSequence { tokens }
    }

    /// Step size used by later `train_step` calls; a no-op for models without
    /// one.
    fn set_learning_rate(&mut self, _lr: f64) {}

    fn learning_rate(&self) -> Option<f64> {
        None
    }

    /// Model state (configuration, parameters, optimizer) as bytes.
    fn state_bytes(&self) -> Vec<u8>;

    fn clone_box(&self) -> Box<dyn SequenceModel>;
}

impl Clone for Box<dyn SequenceModel> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

pub(crate) fn draw<R: Rng>(p: &[f64], rng: &mut R) -> u32 {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i as u32;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0) as u32
}

/// Softmax of `logits / temperature` in f64.
pub(crate) fn softmax_t(logits: &[f32], temperature: f64) -> Vec<f64> {
    let t = temperature.max(1e-8);
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x)) as f64;
    let mut p: Vec<f64> = logits.iter().map(|&x| ((x as f64 - max) / t).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    p
}

/// `P(i)` proportional to `(f_i - f_min + eps)^beta`.
pub fn selection_probabilities(fitness: &[f64], beta: f64, eps: f64) -> Result<Vec<f64>, ModelError> {
    if fitness.is_empty() {
        return Err(ModelError::EmptyPopulation);
    }
    if !(beta >= 0.0) || !(eps > 0.0) {
        return Err(ModelError::InvalidConfig("beta must be >= 0 and eps > 0".into()));
    }
    let min = fitness.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = fitness.iter().map(|f| (f - min + eps).powf(beta)).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// `n` indices drawn with replacement from [`selection_probabilities`].
pub fn weighted_batch_sampler(
    fitness: &[f64],
    beta: f64,
    eps: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<usize>, ModelError> {
    let p = selection_probabilities(fitness, beta, eps)?;
    let dist = WeightedIndex::new(&p).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
    let mut rng = rng_from(seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

const MAGIC: &[u8; 8] = b"SCGNCKPT";
const VERSION: u32 = 1;

/// `magic | version u32 | vocab sha-256 | kind u8 | state`.
pub fn save_checkpoint(model: &dyn SequenceModel, vocab: &TokenVocabulary) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&vocab.hash());
    out.push(match model.kind() {
        ModelKind::Transformer => 1,
        ModelKind::Ngram => 2,
    });
    out.extend_from_slice(&model.state_bytes());
    out
}

pub fn load_checkpoint(bytes: &[u8], vocab: &TokenVocabulary) -> Result<Box<dyn SequenceModel>, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.into());
    if bytes.len() < 45 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    if bytes[12..44] != vocab.hash() {
        return Err(ModelError::VocabularyMismatch);
    }
    let model: Box<dyn SequenceModel> = match bytes[44] {
        1 => Box::new(Transformer::from_state_bytes(&bytes[45..])?),
        2 => Box::new(NgramModel::from_state_bytes(&bytes[45..])?),
        k => return Err(ModelError::Checkpoint(format!("unknown model kind {k}"))),
    };
    if model.vocab_size() != vocab.size() {
        return Err(ModelError::VocabularyMismatch);
    }
    Ok(model)
}

/// Length-prefixed JSON header followed by raw bytes.
pub(crate) fn write_state(header: &impl Serialize, payload: &[u8]) -> Vec<u8> {
    let h = serde_json::to_vec(header).expect("header serializes");
    let mut out = (h.len() as u32).to_le_bytes().to_vec();
    out.extend_from_slice(&h);
    out.extend_from_slice(payload);
    out
}

pub(crate) fn read_state<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<(T, &[u8]), ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    if bytes.len() < 4 {
        return Err(bad("truncated header".into()));
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = bytes.get(4..4 + n).ok_or_else(|| bad("truncated header".into()))?;
    let header = serde_json::from_slice(body).map_err(|e| bad(e.to_string()))?;
    Ok((header, &bytes[4 + n..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_follow_shifted_power() {
        let p = selection_probabilities(&[1.0, 0.5, 0.0], 2.0, 1e-12).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-9 && (p[1] - 0.2).abs() < 1e-9 && p[2] < 1e-12);
        let u = selection_probabilities(&[3.0, -1.0, 0.25], 0.0, 1e-6).unwrap();
        assert!(u.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(selection_probabilities(&[], 2.0, 1e-6), Err(ModelError::EmptyPopulation));
    }

    #[test]
    fn sampler_is_seeded() {
        let f = [0.3, 0.1, 0.9, 0.5];
        let a = weighted_batch_sampler(&f, 2.0, 1e-6, 100, 9).unwrap();
        assert_eq!(a, weighted_batch_sampler(&f, 2.0, 1e-6, 100, 9).unwrap());
        assert!(a.iter().all(|&i| i < 4));
    }

    #[test]
    fn framing_masks_after_terminator() {
        let (inp, tgt) = frame(&[5, 6, 0, 0]);
        assert_eq!(inp, vec![0, 5, 6, 0]);
        assert_eq!(tgt, vec![Some(5), Some(6), Some(0), None]);
    }

    #[test]
    fn batch_padding_and_validation() {
        let seqs = [EulerSequence { tokens: vec![4, 5, 6] }, EulerSequence { tokens: vec![7] }];
        let b = TrainingBatch::new(&seqs, vec![1.0, 1.0], 2048).unwrap();
        assert_eq!(b.sequences, vec![vec![4, 5, 6, 0], vec![7, 0, 0, 0]]);
        assert!(b.validate(8).is_ok());
        assert_eq!(b.validate(7), Err(ModelError::TokenOutOfRange { token: 7, vocab: 7 }));
    }
}
