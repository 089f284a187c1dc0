//! Simulation laboratory: four-site data generation, Monte Carlo truth,
//! replication studies, and a randomized losslessness check.

mod lossless;
mod plot;
mod scenario;
mod study;
mod truth;

use thiserror::Error;

pub use lossless::{random_lossless_instance, verify_lossless, LosslessInstance, LosslessSummary, DEFAULT_LOSSLESS_TOLERANCE};
pub use plot::{bar_chart_svg, Series};
pub use scenario::{gen_scenario, Scenario, ScenarioSpec, COVARIATES, SITES};
pub use study::{
    render_summary, run_study, write_metrics_csv, write_study_outputs, Cell, CellSpec, MetricsRow, StudyConfig,
    StudyOptions, LOSSLESS_TOLERANCE,
};
pub use truth::{
    compute_truth_table, true_value_oracle, TruthCache, TruthEstimate, TruthTable, DEFAULT_TRUTH_DRAWS, ORACLE_SEED,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("data generation failed: {0}")]
    Data(String),
    #[error("scenario ({scenario}) replicate {replicate} failed: {reason}")]
    Replicate { scenario: Scenario, replicate: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}
