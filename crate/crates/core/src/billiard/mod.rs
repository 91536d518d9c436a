//! Dispersing billiards with flat cusps: table geometry, the collision map
//! in `(r, θ)` coordinates and the inducing set of orbits that avoid long
//! cusp excursions.

mod dynamics;
pub mod geom;
mod table;

use thiserror::Error;

use crate::roots::RootError;

pub use dynamics::{
    collide, flip, in_inducing_set, induced_step, orbit, shoot, sinetheta_sample, velocity, CollisionState, InducedOrbit,
    InducedReturn, GRAZING_TOL, PRECISION_CUTOFF,
};
pub use table::{cusp_profile, ArcSpec, BilliardTable, CuspPlacement, CuspSpec, Side, TableSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilliardError {
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("table file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("argument out of range: {0}")]
    OutOfRange(String),
    #[error("grazing collision (theta = {theta:e})")]
    Grazing { theta: f64 },
    #[error("precision exhausted deep in cusp {cusp} (x = {x:e})")]
    PrecisionExhausted { cusp: usize, x: f64 },
    #[error("outgoing ray from r = {r} does not meet the boundary")]
    NoIntersection { r: f64 },
    #[error("intersection solver failed: {0}")]
    Solver(#[from] RootError),
    #[error("return time exceeded the cap of {cap} collisions")]
    ReturnCapExceeded { cap: u64 },
    #[error("state is not in the inducing set")]
    NotInInducingSet,
}

impl BilliardError {
    /// Whether the error ends a single orbit (to be discarded and counted)
    /// rather than signalling bad input.
    pub fn is_orbit_failure(&self) -> bool {
        matches!(
            self,
            BilliardError::Grazing { .. }
                | BilliardError::PrecisionExhausted { .. }
                | BilliardError::NoIntersection { .. }
                | BilliardError::Solver(_)
                | BilliardError::ReturnCapExceeded { .. }
        )
    }
}
