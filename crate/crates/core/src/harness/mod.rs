//! Experiment orchestration: theorem-case prediction, configuration,
//! seeded parallel ensembles and report files.

mod config;
pub mod diagnostics;
mod predict;
mod report;
mod run;

pub use config::{geometric_grid, load_table, ExperimentConfig, Mode, PoleConfig, SystemConfig, DEFAULT_K0, DEFAULT_MEAN_ITERATES, MIN_GRID_POINTS, MIN_REPLICAS};
pub use predict::{matching_cases, predict_limit_law, CaseId, CaseReport, PredictedLaw, SystemParams};
pub use report::{config_hash, emit_report, AcceptanceRule, PlotData, Report};
pub use run::{
    billiard_case_report, compare_induced_lifted, distribution_checks, induced_grid, predict_config, run_experiment, CenteringInfo,
    DistributionChecks, EnsembleRun, ExperimentResult, LiftComparison, Quarantine, Route, BOOTSTRAP_RESAMPLES, KS_LEVEL, MAX_DISCARD_FRACTION,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("refused: {0}")]
    Refused(String),
    #[error("case selection needs a report: {0}")]
    MissingReport(String),
    #[error("replica {replica} failed after all retries: {reason}")]
    ReplicaFailed { replica: usize, reason: String },
    #[error("{discarded} discarded replicas exceed the quarantine budget for {replicas}")]
    TooManyDiscarded { discarded: usize, replicas: usize },
    #[error("degenerate ensemble: {0}")]
    Degenerate(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl HarnessError {
    /// Errors caused by the caller's input, as opposed to a failed run.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            HarnessError::InvalidConfig(_) | HarnessError::Parse { .. } | HarnessError::Refused(_) | HarnessError::MissingReport(_)
        )
    }
}
