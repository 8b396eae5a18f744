//! Explicit explosions: super-linear growth in `z` with a single-leaf terminal,
//! and the growth of `Z` for a terminal with unbounded slope.

use serde::Serialize;

use super::AnalysisError;
use crate::driver::DriverSpec;
use crate::lattice::{build_lattice, LatticeMode};
use crate::solver::{solve, SolveConfig, TerminalSpec};

/// Root value of `a_{i} = a_{i+1}/2 + 2^{-q} N^{q/2-1} a_{i+1}^q`, `a_N = a`,
/// iterated `N` times. This is `Y_0` for `f = |z|^q`, `T = 1`, `d = 1` and
/// `ξ = a` on the top leaf only.
pub fn explosion_recursion_2_4(n: usize, q: f64, a: f64) -> f64 {
    let c = 2f64.powf(-q) * (n as f64).powf(q / 2.0 - 1.0);
    (0..n).fold(a, |v, _| v / 2.0 + c * v.powf(q))
}

/// Root value of `a_i = a_{i+1}/2 + (a_{i+1}/2)^2`, `a_N = a`: `Y_0` for
/// `f = z^2`, `T = 1`, `d = 1`, `ξ = a` on the top leaf.
pub fn explosion_recursion_4_1(n: usize, a: f64) -> f64 {
    (0..n).fold(a, |v, _| v / 2.0 + (v / 2.0) * (v / 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerExplosion {
    pub n: usize,
    pub q: f64,
    pub a: f64,
    /// `2 N^{(1-q/2)/(q-1)}`: at or above this the recursion does not decay.
    pub threshold: f64,
    pub closed_form_y0: f64,
    pub solver_y0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticExplosion {
    pub n: usize,
    pub a: f64,
    pub closed_form_y0: f64,
    pub solver_y0: f64,
    /// `a (1 + ε)^N` with `ε = (a - 2)/4`.
    pub lower_bound: f64,
    /// The constant solution `(a, 0)` of the larger problem lies strictly
    /// below the smaller one at the root.
    pub comparison_violation: bool,
}

fn top_leaf_solve(n: usize, a: f64, driver: &DriverSpec) -> Result<f64, AnalysisError> {
    let lat = build_lattice(n, 1.0, 1, LatticeMode::Recombining)?;
    let mut leaves = vec![0.0; n + 1];
    leaves[n] = a;
    let xi = TerminalSpec::table(LatticeMode::Recombining, leaves, a.abs())?;
    let r = solve(&lat, driver, &xi, &SolveConfig::default().without_bound_check())?;
    Ok(r.y0())
}

/// `f = |z|^q` with the top-leaf terminal; requires `q ∈ (1, 2)` and `a` at or
/// above the non-decay threshold.
pub fn counterexample_2_4(n: usize, q: f64, a: f64) -> Result<PowerExplosion, AnalysisError> {
    if !(q > 1.0 && q < 2.0) {
        return Err(AnalysisError::Precondition(format!(
            "q must lie in (1, 2), got {q}"
        )));
    }
    if n == 0 {
        return Err(AnalysisError::Precondition("N must be positive".into()));
    }
    let threshold = 2.0 * (n as f64).powf((1.0 - q / 2.0) / (q - 1.0));
    if !(a >= threshold * (1.0 - 1e-12)) {
        return Err(AnalysisError::Precondition(format!(
            "a = {a} is below the threshold {threshold}"
        )));
    }
    let solver_y0 = top_leaf_solve(n, a, &DriverSpec::power_z(q)?)?;
    Ok(PowerExplosion {
        n,
        q,
        a,
        threshold,
        closed_form_y0: explosion_recursion_2_4(n, q, a),
        solver_y0,
    })
}

/// `f = z^2`, `ξ = a` on the top leaf versus `ξ = a` everywhere; requires `a > 2`.
pub fn counterexample_4_1(n: usize, a: f64) -> Result<QuadraticExplosion, AnalysisError> {
    if !(a > 2.0) {
        return Err(AnalysisError::Precondition(format!("a must exceed 2, got {a}")));
    }
    if n == 0 {
        return Err(AnalysisError::Precondition("N must be positive".into()));
    }
    let solver_y0 = top_leaf_solve(n, a, &DriverSpec::quadratic_z())?;
    let closed_form_y0 = explosion_recursion_4_1(n, a);
    Ok(QuadraticExplosion {
        n,
        a,
        closed_form_y0,
        solver_y0,
        lower_bound: a * (1.0 + (a - 2.0) / 4.0).powi(n as i32),
        comparison_violation: a < closed_form_y0,
    })
}

/// `sign(x) (sqrt|x| ∧ 1)`.
pub fn sqrt_clip(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().sqrt().min(1.0)
    }
}

/// `Z` at the central node of level `N-1` for the terminal `sqrt_clip(W_1)`,
/// `d = 1`, `T = 1`, `N` odd. It grows like `N^{1/4}`.
pub fn z_blowup(n: usize) -> Result<f64, AnalysisError> {
    if n.is_multiple_of(2) {
        return Err(AnalysisError::Precondition(format!("N must be odd, got {n}")));
    }
    let lat = build_lattice(n, 1.0, 1, LatticeMode::Recombining)?;
    let leaves: Vec<f64> = (0..=n).map(|k| sqrt_clip(lat.walk(n, k)[0])).collect();
    Ok(lat.cond_covariation(&leaves, n - 1, (n - 1) / 2, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_two_steps() {
        assert_eq!(explosion_recursion_4_1(1, 3.0), 3.75);
        assert_eq!(explosion_recursion_4_1(2, 3.0), 5.390625);
        let r = counterexample_4_1(2, 3.0).unwrap();
        assert!((r.solver_y0 - 5.390625).abs() < 1e-12);
        assert_eq!(r.lower_bound, 4.6875);
        assert!(r.comparison_violation);
        assert_eq!(counterexample_4_1(1, 3.0).unwrap().lower_bound, 3.75);
        let r10 = counterexample_4_1(10, 3.0).unwrap();
        assert!(r10.closed_form_y0 >= r10.lower_bound);
        assert!((r10.lower_bound - 27.939_67).abs() < 1e-4);
        assert!(counterexample_4_1(3, 2.0).is_err());
    }

    #[test]
    fn power_fixed_point() {
        let r = counterexample_2_4(64, 1.5, 16.0).unwrap();
        assert!((r.threshold - 16.0).abs() < 1e-12);
        assert!((r.closed_form_y0 - 16.0).abs() < 1e-9);
        assert!((r.solver_y0 - r.closed_form_y0).abs() < 1e-9);
        assert!(matches!(
            counterexample_2_4(64, 1.5, 15.0),
            Err(AnalysisError::Precondition(_))
        ));
        assert!(counterexample_2_4(64, 2.0, 16.0).is_err());
    }

    #[test]
    fn blowup_central_value() {
        assert!(z_blowup(4).is_err());
        for n in [1usize, 9, 81, 625] {
            let z = z_blowup(n).unwrap();
            let expected = (n as f64).powf(0.25);
            assert!((z - expected).abs() < 1e-9 * expected, "N={n}: {z}");
        }
    }

    #[test]
    fn clip_shape() {
        assert_eq!(sqrt_clip(0.0), 0.0);
        assert_eq!(sqrt_clip(0.25), 0.5);
        assert_eq!(sqrt_clip(-0.25), -0.5);
        assert_eq!(sqrt_clip(9.0), 1.0);
        assert_eq!(sqrt_clip(-9.0), -1.0);
    }
}
