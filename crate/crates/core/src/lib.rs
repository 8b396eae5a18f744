//! Backward stochastic difference equations on Bernoulli random-walk lattices.
//!
//! The crate solves
//!
//! ```text
//! Y_{t_i} = Y_{t_{i+1}} + f(t_{i+1}, W, Y_{t_i}, Z_{t_{i+1}}) Δ<W> - Z_{t_{i+1}} ΔW_{t_{i+1}} - ΔM_{t_{i+1}}
//! ```
//!
//! by exact backward induction over the `2^d` branches of each node, with an
//! implicit root-finding step in `Y`. Around the solver sit checks of the
//! comparison principle, a-priori and stability bounds, counterexamples for
//! quadratic and explosive settings, and a convex-dual certificate.
//!
//! ```
//! use bsdelta_core::{build_lattice, solve, DriverSpec, LatticeMode, SolveConfig, TerminalSpec};
//!
//! let lattice = build_lattice(20, 1.0, 1, LatticeMode::Recombining).unwrap();
//! let driver = DriverSpec::linear_y_power_z(1.0, 1.0, 1.5).unwrap();
//! let xi = TerminalSpec::expression("sign(w1) * min(sqrt(abs(w1)), 1)", 1.0, 1, vec![]).unwrap();
//! let result = solve(&lattice, &driver, &xi, &SolveConfig::default()).unwrap();
//! assert!(result.y0().is_finite());
//! ```

// `!(x < y)` is used on purpose so that NaN fails the check, and level loops
// index several per-level arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod driver;
pub mod duality;
pub mod field;
pub mod lattice;
pub mod solver;

pub use analysis::{
    compare, comparison_thresholds, convergence_study, counterexample_2_4, counterexample_4_1,
    gronwall_bound, stability_gap, z_blowup, AnalysisError, ComparisonReport, ConvergenceTable, Verdict,
};
pub use driver::{
    builtin, conjugate, parse_driver, subgradient_in_z, Builtin, ConjugateResult, DriverConstants,
    DriverError, DriverSpec, PathInfo,
};
pub use duality::{
    certify, dual_value, duality_threshold, entropy_check, maximizer, moment_bound,
    random_admissible_control, tilt_probabilities, ControlField, DualCertificate, DualityError,
};
pub use field::{AdaptedField, Timing};
pub use lattice::{build_lattice, ContinuousPath, Lattice, LatticeError, LatticeMode, TimeGrid};
pub use solver::{
    apriori_bound, deterministic_solution, implicit_step, solvability_margin, solve, Engine, SolveConfig,
    SolveError, SolveResult, TerminalSpec,
};
