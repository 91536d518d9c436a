//! Heavy-tail statistics: the reference stable sampler, tail-index and
//! scaling-exponent estimators, and distribution comparisons.
//!
//! Every estimator is a pure function of its input data.

mod ensemble;
mod hill;
mod karamata;
mod ks;
mod regression;
mod stable;

pub use ensemble::{bootstrap_exponent_stderr, scaling_exponent, EnsembleMeta, ExponentFit, SumEnsemble, DEFAULT_QUANTILE_PAIR};
pub use hill::{default_hill_k, hill_k_stability, hill_tail_index, MIN_HILL_K};
pub use karamata::{karamata_residuals, pareto_cell_means, KaramataItem, KaramataRow, KaramataTable, TailHistogram};
pub use ks::{ks_critical_value, ks_two_sample, median, self_similarity_check, self_similarity_distance};
pub use regression::{ols, LinearFit};
pub use stable::{sample_stable, sample_stable_param, StableParam};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {min} order statistics, got k = {k}")]
    TooFewOrderStatistics { k: usize, min: usize },
    #[error("k = {k} must be smaller than the sample size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("empty sample")]
    Empty,
    #[error("sample sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("non-positive quantile spread {spread} at n = {n}")]
    NonPositiveSpread { n: u64, spread: f64 },
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Sorts a copy of the data ascending. NaNs are rejected upstream.
pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Linear-interpolation quantile of ascending data (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
