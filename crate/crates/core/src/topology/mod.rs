//! Converters, the device-pin graph, the Eulerian token codec and
//! canonical forms.

pub mod canon;
pub mod converter;
pub mod euler;
pub mod pin_graph;
pub mod vocab;

use thiserror::Error;

pub use canon::{canonical_form, is_isomorphic, CanonicalForm};
pub use converter::{
    control_to_vconts, parse_converter, vconts_to_control, Capacitor, ControlWord, Converter,
    ConverterDocument, Phase, Ports, Switch, MAX_MODES, N_PHASES,
};
pub use euler::{euler_decode, euler_encode, EulerError, EulerSequence, SequenceRecord};
pub use pin_graph::{
    from_pin_graph, to_pin_graph, CapPin, DevicePinGraph, PinNode, PortKind, SwitchPin,
    SyntaxError,
};
pub use vocab::{TokenVocabulary, VocabConfig, TRUNCATE};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },
    #[error("switch {switch}: control word has {found} bits, expected {expected}")]
    ControlLengthMismatch { switch: u32, expected: usize, found: usize },
    #[error("missing port: {0}")]
    MissingPort(String),
}
