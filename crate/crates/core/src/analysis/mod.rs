//! Exact analytic evaluation of converter modes and whole converters.

pub mod bounds;
pub mod engine;
pub mod kirchhoff;
pub mod rational;
pub mod report;

use thiserror::Error;

pub use bounds::{Bound, NormalizationBounds};
pub use engine::{
    analyze_mode, charge_multipliers, check_properly_posed, extract_vcr, fsl_impedance,
    fsl_metric, fsl_parameters, mode_systems, optimal_capacitances, optimal_sizing, ssl_impedance,
    ssl_metric, ChargeSolution, Metric, ModeAnalysis, NotPosed, PosedData, SizingRatios,
    SwitchParameters,
};
pub use kirchhoff::{
    cutset_system, loop_matrix, spanning_forest, spanning_tree, stacked_loop_system,
    CutsetSystem, LoopSystem, SpanningForest,
};
pub use rational::Rational;
pub use report::{analyze_converter, figure_of_merit, ConverterReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("phase network is disconnected")]
    Disconnected,
    #[error("mode is not properly posed")]
    NotPosed,
    #[error("inconsistent network: {0}")]
    Inconsistent(String),
    #[error("expected {expected} target ratios, got {found}")]
    TargetCount { expected: usize, found: usize },
}
