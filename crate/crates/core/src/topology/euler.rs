//! Eulerian sequence codec: a closed walk over the directed doubling of a pin
//! graph, written as token ids.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pin_graph::{DevicePinGraph, PinNode, PortKind};
use super::vocab::{TokenVocabulary, TRUNCATE};
use crate::util::rng_from;

pub const MAX_SEQUENCE_LEN: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EulerError {
    #[error("graph is empty or disconnected")]
    Disconnected,
    #[error("pin {0} has no token in this vocabulary")]
    OutOfVocabulary(String),
    #[error("unknown token id {0}")]
    UnknownToken(u32),
    #[error("traversal starts at {start} but ends at {end}")]
    OpenTraversal { start: String, end: String },
    #[error("empty sequence")]
    EmptySequence,
    #[error("token {0} repeats back-to-back")]
    SelfLoop(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EulerSequence {
    pub tokens: Vec<u32>,
}

impl EulerSequence {
    /// Tokens up to (not including) the first TRUNCATE after any leading ones.
    pub fn body(&self) -> &[u32] {
        let start = self.tokens.iter().position(|&t| t != TRUNCATE).unwrap_or(self.tokens.len());
        let rest = &self.tokens[start..];
        let end = rest.iter().position(|&t| t == TRUNCATE).unwrap_or(rest.len());
        &rest[..end]
    }

    /// TRUNCATE-padded copy of length `len` (never shorter than the body).
    pub fn padded(&self, len: usize) -> Vec<u32> {
        let mut out = self.body().to_vec();
        if out.len() < len {
            out.resize(len, TRUNCATE);
        }
        out
    }
}

/// One line of a sequence JSON Lines file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub circuit_id: u64,
    pub tokens: Vec<u32>,
}

pub fn write_jsonl(records: &[SequenceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_jsonl(text: &str) -> Result<Vec<SequenceRecord>, serde_json::Error> {
    text.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect()
}

/// Hierholzer's algorithm on the doubled graph, starting at VIN when present.
/// The seed only permutes neighbour order.
pub fn euler_encode(
    g: &DevicePinGraph,
    vocab: &TokenVocabulary,
    seed: u64,
) -> Result<EulerSequence, EulerError> {
    if !g.is_connected() {
        return Err(EulerError::Disconnected);
    }
    let nodes: Vec<PinNode> = g.nodes().iter().copied().collect();
    let ids: Vec<u32> = nodes
        .iter()
        .map(|n| vocab.id_of(n).ok_or_else(|| EulerError::OutOfVocabulary(n.to_string())))
        .collect::<Result<_, _>>()?;
    let index = |n: &PinNode| nodes.binary_search(n).unwrap();
    let mut rng = rng_from(seed);
    let mut out_arcs: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for &(a, b) in g.edges() {
        out_arcs[index(&a)].push(index(&b));
        out_arcs[index(&b)].push(index(&a));
    }
    for arcs in &mut out_arcs {
        arcs.shuffle(&mut rng);
    }
    let start = nodes.binary_search(&PinNode::Port(PortKind::Vin)).unwrap_or(0);
    let mut next = vec![0usize; nodes.len()];
    let mut stack = vec![start];
    let mut walk = Vec::with_capacity(2 * g.n_edges() + 1);
    while let Some(&v) = stack.last() {
        if next[v] < out_arcs[v].len() {
            stack.push(out_arcs[v][next[v]]);
            next[v] += 1;
        } else {
            walk.push(ids[v]);
            stack.pop();
        }
    }
    walk.reverse();
    Ok(EulerSequence { tokens: walk })
}

/// Total on arbitrary token input: every failure is a typed error.
pub fn euler_decode(s: &EulerSequence, vocab: &TokenVocabulary) -> Result<DevicePinGraph, EulerError> {
    let body = s.body();
    if body.len() < 2 {
        if let Some(&t) = body.first() {
            vocab.node_of(t).ok_or(EulerError::UnknownToken(t))?;
        }
        return Err(EulerError::EmptySequence);
    }
    let nodes: Vec<PinNode> = body
        .iter()
        .map(|&t| vocab.node_of(t).ok_or(EulerError::UnknownToken(t)))
        .collect::<Result<_, _>>()?;
    let (first, last) = (nodes[0], nodes[nodes.len() - 1]);
    if first != last {
        return Err(EulerError::OpenTraversal { start: first.to_string(), end: last.to_string() });
    }
    let mut g = DevicePinGraph::new();
    for w in nodes.windows(2) {
        if w[0] == w[1] {
            return Err(EulerError::SelfLoop(w[0].to_string()));
        }
        g.add_edge(w[0], w[1]);
    }
    Ok(g)
}
