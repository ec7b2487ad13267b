//! Token vocabulary for Eulerian sequences.
//!
//! Layout: `0` is TRUNCATE, `1..=3` the ports, `4..=19` VCONT1..VCONT16,
//! then four pins per switch slot (D, G, S, B) and two per capacitor slot
//! (P, N).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pin_graph::{CapPin, PinNode, PortKind, SwitchPin};

pub const TRUNCATE: u32 = 0;
pub const N_VCONT: u8 = 16;
const FIRST_VCONT: u32 = 4;
const FIRST_DEVICE: u32 = FIRST_VCONT + N_VCONT as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub max_switches: u32,
    pub max_caps: u32,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { max_switches: 64, max_caps: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenVocabulary {
    config: VocabConfig,
}

impl TokenVocabulary {
    pub fn new(config: VocabConfig) -> Self {
        Self { config }
    }

    pub fn config(&self) -> VocabConfig {
        self.config
    }

    pub fn size(&self) -> usize {
        (FIRST_DEVICE + 4 * self.config.max_switches + 2 * self.config.max_caps) as usize
    }

    pub fn id_of(&self, node: &PinNode) -> Option<u32> {
        match *node {
            PinNode::Port(p) => Some(1 + p as u32),
            PinNode::Vcont(k) if (1..=N_VCONT).contains(&k) => Some(FIRST_VCONT + k as u32 - 1),
            PinNode::Vcont(_) => None,
            PinNode::Switch(id, pin) if id >= 1 && id <= self.config.max_switches => {
                Some(FIRST_DEVICE + 4 * (id - 1) + pin as u32)
            }
            PinNode::Cap(id, pin) if id >= 1 && id <= self.config.max_caps => {
                Some(FIRST_DEVICE + 4 * self.config.max_switches + 2 * (id - 1) + pin as u32)
            }
            _ => None,
        }
    }

    /// `None` for TRUNCATE and out-of-range ids.
    pub fn node_of(&self, token: u32) -> Option<PinNode> {
        let switch_end = FIRST_DEVICE + 4 * self.config.max_switches;
        let cap_end = switch_end + 2 * self.config.max_caps;
        match token {
            TRUNCATE => None,
            1..=3 => Some(PinNode::Port(PortKind::ALL[token as usize - 1])),
            t if t < FIRST_DEVICE => Some(PinNode::Vcont((t - FIRST_VCONT + 1) as u8)),
            t if t < switch_end => {
                let off = t - FIRST_DEVICE;
                Some(PinNode::Switch(off / 4 + 1, SwitchPin::ALL[(off % 4) as usize]))
            }
            t if t < cap_end => {
                let off = t - switch_end;
                Some(PinNode::Cap(off / 2 + 1, CapPin::ALL[(off % 2) as usize]))
            }
            _ => None,
        }
    }

    pub fn token_name(&self, token: u32) -> String {
        match self.node_of(token) {
            Some(node) => node.to_string(),
            None if token == TRUNCATE => "TRUNCATE".into(),
            None => format!("<unk:{token}>"),
        }
    }

    /// Digest of the full token table; guards checkpoints against reuse
    /// with a different vocabulary.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in 0..self.size() as u32 {
            h.update(self.token_name(t).as_bytes());
            h.update([0u8]);
        }
        h.finalize().into()
    }
}
