//! Analytic evaluation and evolutionary discovery of reconfigurable
//! two-phase switched-capacitor converter topologies.

pub mod analysis;
pub mod evolution;
pub mod families;
pub mod model;
pub mod oracle;
pub mod phase;
pub mod store;
pub mod topology;
pub mod util;
