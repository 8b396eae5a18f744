//! Checks built on top of the solver: comparison, stability, explosion
//! counterexamples, Z growth, convergence tables and a discrete Gronwall bound.

pub mod comparison;
pub mod convergence;
pub mod counterexamples;
pub mod gronwall;
pub mod stability;

use thiserror::Error;

use crate::driver::DriverError;
use crate::lattice::LatticeError;
use crate::solver::SolveError;

pub use comparison::{compare, comparison_thresholds, ComparisonReport, ThresholdReport, Verdict};
pub use convergence::{convergence_study, ConvergenceRow, ConvergenceTable};
pub use counterexamples::{
    counterexample_2_4, counterexample_4_1, explosion_recursion_2_4, explosion_recursion_4_1, sqrt_clip,
    z_blowup, PowerExplosion, QuadraticExplosion,
};
pub use gronwall::{gronwall_bound, gronwall_extremal, GronwallReport, GronwallVerdict};
pub use stability::{stability_constant, stability_gap, z_bound, StabilityReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}
