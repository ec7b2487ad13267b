//! Count-based k-gram model with recursive additive smoothing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{frame, read_state, write_state, ModelError, ModelKind, SequenceModel, TrainingBatch};
use crate::topology::euler::MAX_SEQUENCE_LEN;
use crate::topology::TRUNCATE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramConfig {
    pub vocab_size: usize,
    /// Tokens per k-gram (context length plus one).
    pub order: usize,
    /// Pseudo-count mass given to the next-lower order.
    pub alpha: f64,
    pub max_len: usize,
}

impl NgramConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size, order: 4, alpha: 1.0, max_len: MAX_SEQUENCE_LEN }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size < 2 || self.order == 0 || self.max_len == 0 || !(self.alpha > 0.0) {
            return Err(ModelError::InvalidConfig("vocab_size >= 2, order >= 1, alpha > 0 required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Counts {
    total: f64,
    next: BTreeMap<u32, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    cfg: NgramConfig,
    /// Keyed by context (oldest token first), for every length below `order`.
    table: BTreeMap<Vec<u32>, Counts>,
}

#[derive(Serialize, Deserialize)]
struct State {
    config: NgramConfig,
    table: Vec<(Vec<u32>, Counts)>,
}

impl NgramModel {
    pub fn new(cfg: NgramConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(Self { cfg, table: BTreeMap::new() })
    }

    pub fn config(&self) -> &NgramConfig {
        &self.cfg
    }

    /// Last `order - 1` tokens of `history`, left-padded with TRUNCATE.
    fn context(&self, history: &[u32]) -> Vec<u32> {
        let k = self.cfg.order - 1;
        let mut ctx = vec![TRUNCATE; k.saturating_sub(history.len())];
        ctx.extend_from_slice(&history[history.len().saturating_sub(k)..]);
        ctx
    }

    fn probability(&self, ctx: &[u32], w: u32) -> f64 {
        let mut p = 1.0 / self.cfg.vocab_size as f64;
        for j in 0..=ctx.len() {
            let key = &ctx[ctx.len() - j..];
            if let Some(c) = self.table.get(key) {
                let n = c.next.get(&w).copied().unwrap_or(0.0);
                p = (n + self.cfg.alpha * p) / (c.total + self.cfg.alpha);
            }
        }
        p
    }

    fn distribution(&self, history: &[u32]) -> Vec<f64> {
        let ctx = self.context(history);
        (0..self.cfg.vocab_size as u32).map(|w| self.probability(&ctx, w)).collect()
    }

    /// Scored (history, target) pairs of a batch, with masking applied.
    fn events(batch: &TrainingBatch) -> impl Iterator<Item = (&[u32], u32)> + '_ {
        batch.sequences.iter().flat_map(|row| {
            let (_, targets) = frame(row);
            targets.into_iter().enumerate().filter_map(move |(t, tgt)| tgt.map(|w| (&row[..t], w)))
        })
    }

    pub fn from_state_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (state, rest): (State, &[u8]) = read_state(bytes)?;
        if !rest.is_empty() {
            return Err(ModelError::Checkpoint("trailing bytes after n-gram state".into()));
        }
        let mut model = Self::new(state.config)?;
        model.table = state.table.into_iter().collect();
        Ok(model)
    }
}

impl SequenceModel for NgramModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Ngram
    }

    fn vocab_size(&self) -> usize {
        self.cfg.vocab_size
    }

    fn max_len(&self) -> usize {
        self.cfg.max_len
    }

    fn next_token_distribution(&self, context: &[u32], temperature: f64) -> Vec<f64> {
        let p = self.distribution(context);
        let inv_t = 1.0 / temperature.max(1e-8);
        let logs: Vec<f64> = p.iter().map(|x| x.ln() * inv_t).collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    fn evaluate(&self, batch: &TrainingBatch) -> Result<f64, ModelError> {
        batch.validate(self.cfg.vocab_size)?;
        let (mut nll, mut n) = (0.0, 0usize);
        for (hist, w) in Self::events(batch) {
            nll -= self.probability(&self.context(hist), w).ln();
            n += 1;
        }
        Ok(nll / n.max(1) as f64)
    }

    fn train_step(&mut self, batch: &TrainingBatch) -> Result<f64, ModelError> {
        let loss = self.evaluate(batch)?;
        let events: Vec<(Vec<u32>, u32)> = Self::events(batch).map(|(h, w)| (self.context(h), w)).collect();
        for (ctx, w) in events {
            for j in 0..=ctx.len() {
                let c = self.table.entry(ctx[ctx.len() - j..].to_vec()).or_default();
                c.total += 1.0;
                *c.next.entry(w).or_insert(0.0) += 1.0;
            }
        }
        Ok(loss)
    }

    fn state_bytes(&self) -> Vec<u8> {
        let state = State {
            config: self.cfg.clone(),
            table: self.table.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        };
        write_state(&state, &[])
    }

    fn clone_box(&self) -> Box<dyn SequenceModel> {
        Box::new(self.clone())
    }
}
