//! Monte Carlo laboratory for stable limit laws of heavy-tailed Birkhoff sums
//! on intermittent interval maps and dispersing billiards with flat cusps.

// `!(x > 0.0)` is used deliberately so that NaN is rejected alongside the bound.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod billiard;
pub mod harness;
pub mod interval;
pub mod observables;
pub mod pointprocess;
pub mod quadrature;
pub mod rng;
pub mod roots;
pub mod scalar;
pub mod stats;

pub use billiard::{BilliardError, BilliardTable, CollisionState};
pub use harness::{ExperimentConfig, HarnessError, PredictedLaw};
pub use interval::IntervalError;
pub use observables::ObservableError;
pub use scalar::Real;
pub use stats::{ExponentFit, StatsError, SumEnsemble};

/// Double-precision LSV map, the type every Monte Carlo driver uses.
pub type LsvMap = interval::LsvMap<f64>;
/// Single-precision LSV map, for precision comparisons.
pub type LsvMap32 = interval::LsvMap<f32>;
pub type ObservableSpec = observables::ObservableSpec<f64>;
pub type PhasePoint = observables::PhasePoint<f64>;
pub type PhaseSpace = observables::PhaseSpace<f64>;
pub type Pole = observables::Pole<f64>;
