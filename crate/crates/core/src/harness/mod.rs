//! Load generation, metrics and the experiment scenarios built on them.

pub mod experiment;
pub mod load;
pub mod metrics;
pub mod scenario;

pub use experiment::{compare_policies, prepare, refinement_comparison, run_experiment, ExperimentResult, RefinementReport, RefinementRound};
pub use load::{arrivals, generate_load, LoadPattern};
pub use metrics::{percentile, read_csv, write_csv, MetricsCollector, SeriesRow, Summary, CSV_HEADER, SCHEMA_VERSION};
pub use scenario::{preset, LoadSpec, ObjectSpec, Placement, Scenario, PRESETS};

use crate::runtime::RuntimeError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("audit failed: {0}")]
    Audit(String),
}
