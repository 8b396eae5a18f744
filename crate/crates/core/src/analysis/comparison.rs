//! Comparison of two solutions with ordered drivers and terminals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::AnalysisError;
use crate::driver::DriverSpec;
use crate::lattice::{Lattice, LatticeMode};
use crate::solver::{
    apriori_bound, resolve_lattice, solve, Engine, NodeContext, SolveConfig, SolveResult, TerminalSpec,
};

/// Ordered solutions are accepted down to this gap.
pub const ORDER_TOL: f64 = 1e-10;

const SPOT_CHECKS: usize = 2000;
const SPOT_SEED: u64 = 0xc0_4a_2e;

/// Left-hand sides of the two step-size conditions that make the comparison
/// argument constructive, with `D = 2(C+1)exp(K̃T)` and `K̃ = K ∨ L`:
///
/// * `K̃ (1 + d^{q/2} D^q Δ^{-q/2}) Δ < 1`
/// * `d q K̃ (1 + d^{q/4} D^{q/2} Δ^{-q/4}) ||ΔW||_∞ <= 1`
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub lhs_mesh: f64,
    pub lhs_increment: f64,
    pub ok: bool,
}

pub fn comparison_thresholds(c: f64, k: f64, q: f64, l: f64, lattice: &Lattice) -> ThresholdReport {
    let kt = k.max(l);
    let t = lattice.horizon();
    let d = lattice.dim() as f64;
    let dqv = lattice.dqv();
    let big_d = 2.0 * (c + 1.0) * (kt * t).exp();
    let lhs_mesh = kt * (1.0 + d.powf(q / 2.0) * big_d.powf(q) * dqv.powf(-q / 2.0)) * dqv;
    let lhs_increment =
        d * q * kt * (1.0 + d.powf(q / 4.0) * big_d.powf(q / 2.0) * dqv.powf(-q / 4.0)) * lattice.step();
    ThresholdReport {
        lhs_mesh,
        lhs_increment,
        ok: (1.0..2.0).contains(&q) && lhs_mesh < 1.0 && lhs_increment <= 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Ordered,
    Violated { level: usize, node: usize },
    ThresholdsNotMet,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    /// `min (Y1 - Y2)` over all nodes.
    pub min_gap: f64,
    pub witness_level: usize,
    pub witness_node: usize,
    /// `min ((C+1)exp(K(T-t)) - |Y_m|)` over nodes of both solutions.
    pub bound_margin: f64,
    pub thresholds: ThresholdReport,
    /// Sampled points where `f1 < f2` or leaves where `ξ1 < ξ2`.
    pub precondition_violations: Vec<String>,
    pub y0_first: f64,
    pub y0_second: f64,
    pub verdict: Verdict,
}

fn bound_margin(r: &SolveResult, c: f64, k: f64) -> f64 {
    let grid = r.lattice.grid();
    let mut m = f64::INFINITY;
    for i in 0..=grid.steps() {
        let b = apriori_bound(c, k, grid.t(i), grid.horizon());
        for &v in r.y.level(i) {
            m = m.min(b - v.abs());
        }
    }
    m
}

/// Solves both problems on a common engine.
pub(crate) fn solve_pair(
    lattice: &Lattice,
    driver1: &DriverSpec,
    terminal1: &TerminalSpec,
    driver2: &DriverSpec,
    terminal2: &TerminalSpec,
    config: &SolveConfig,
) -> Result<(SolveResult, SolveResult), AnalysisError> {
    let m1 = resolve_lattice(lattice, driver1, terminal1, config.engine)?.mode();
    let m2 = resolve_lattice(lattice, driver2, terminal2, config.engine)?.mode();
    let cfg = if m1 != m2 || m1 == LatticeMode::FullTree {
        config.clone().with_engine(Engine::FullTree)
    } else {
        config.clone().with_engine(Engine::Recombining)
    };
    let r1 = solve(lattice, driver1, terminal1, &cfg)?;
    let r2 = solve(lattice, driver2, terminal2, &cfg)?;
    Ok((r1, r2))
}

fn spot_check(
    r1: &SolveResult,
    r2: &SolveResult,
    driver1: &DriverSpec,
    driver2: &DriverSpec,
    y_box: f64,
) -> Result<Vec<String>, AnalysisError> {
    let lat = &r1.lattice;
    let grid = lat.grid();
    let d = lat.dim();
    let hist = driver1.is_path_dependent() || driver2.is_path_dependent();
    let z_box = 1.0 + r1.max_abs_z().max(r2.max_abs_z());
    let mut out = Vec::new();
    let note = |out: &mut Vec<String>, msg: String| {
        if out.len() < 10 {
            out.push(msg);
        }
    };

    let n = lat.steps();
    let leaves1 = r1.y.level(n);
    let leaves2 = r2.y.level(n);
    for (leaf, (a, b)) in leaves1.iter().zip(leaves2).enumerate() {
        if a < b {
            note(
                &mut out,
                format!("terminal: xi1 = {a} < xi2 = {b} at leaf {leaf}"),
            );
        }
    }

    let mut check = |level: usize, node: usize, y: f64, z: &[f64]| -> Result<(), AnalysisError> {
        let ctx = NodeContext::new(lat, level, node, hist)?;
        let info = ctx.info(grid);
        let f1 = driver1.try_eval(&info, y, z)?;
        let f2 = driver2.try_eval(&info, y, z)?;
        if f1 < f2 - 1e-12 * (1.0 + f2.abs()) {
            note(
                &mut out,
                format!("driver: f1 = {f1} < f2 = {f2} at level {level}, node {node}, y = {y}, z = {z:?}"),
            );
        }
        Ok(())
    };

    // the points the second solve actually visits
    for i in 0..n {
        for node in 0..lat.level_size(i) {
            check(i, node, r2.y.scalar(i, node), r2.z.get(i, node))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SPOT_SEED);
    let mut z = vec![0.0; d];
    for _ in 0..SPOT_CHECKS {
        let level = rng.gen_range(0..n);
        let node = rng.gen_range(0..lat.level_size(level));
        let y = rng.gen_range(-y_box..=y_box);
        for zk in z.iter_mut() {
            *zk = rng.gen_range(-z_box..=z_box);
        }
        check(level, node, y, &z)?;
    }
    Ok(out)
}

/// Solves both problems and reports whether `Y1 >= Y2` everywhere.
pub fn compare(
    lattice: &Lattice,
    driver1: &DriverSpec,
    terminal1: &TerminalSpec,
    driver2: &DriverSpec,
    terminal2: &TerminalSpec,
    config: &SolveConfig,
) -> Result<ComparisonReport, AnalysisError> {
    let (r1, r2) = solve_pair(lattice, driver1, terminal1, driver2, terminal2, config)?;
    let c1 = driver1.constants();
    let c2 = driver2.constants();
    let c = terminal1.bound().max(terminal2.bound());
    let k = c1.k.max(c2.k);
    let q = c1.q.max(c2.q);
    let l = c1.l_y.max(c1.l_z).max(c2.l_y).max(c2.l_z);
    let thresholds = comparison_thresholds(c, k, q, l, lattice);

    let mut min_gap = f64::INFINITY;
    let mut witness = (0, 0);
    for i in 0..=lattice.steps() {
        for (node, (a, b)) in r1.y.level(i).iter().zip(r2.y.level(i)).enumerate() {
            if a - b < min_gap {
                min_gap = a - b;
                witness = (i, node);
            }
        }
    }
    let bound_margin = bound_margin(&r1, c, k).min(bound_margin(&r2, c, k));
    let y_box = apriori_bound(c, k, 0.0, lattice.horizon()).max(r1.max_abs_y().max(r2.max_abs_y()));
    let precondition_violations = spot_check(&r1, &r2, driver1, driver2, y_box)?;

    let quadratic = driver1.is_quadratic() || driver2.is_quadratic();
    let verdict = if min_gap >= -ORDER_TOL {
        Verdict::Ordered
    } else if thresholds.ok || quadratic {
        Verdict::Violated {
            level: witness.0,
            node: witness.1,
        }
    } else {
        Verdict::ThresholdsNotMet
    };
    Ok(ComparisonReport {
        min_gap,
        witness_level: witness.0,
        witness_node: witness.1,
        bound_margin,
        thresholds,
        precondition_violations,
        y0_first: r1.y0(),
        y0_second: r2.y0(),
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_lattice;

    #[test]
    fn zero_driver_thresholds() {
        let lat = build_lattice(10, 1.0, 1, LatticeMode::Recombining).unwrap();
        let r = comparison_thresholds(1.0, 0.0, 1.5, 0.0, &lat);
        assert_eq!((r.lhs_mesh, r.lhs_increment, r.ok), (0.0, 0.0, true));
    }

    #[test]
    fn thresholds_decay_with_n() {
        // K = L = 1, C = 1, q = 1.5: the first condition scales like N^{-1/4}
        let at = |n: usize| {
            let lat = build_lattice(n, 1.0, 1, LatticeMode::Recombining).unwrap();
            comparison_thresholds(1.0, 1.0, 1.5, 1.0, &lat)
        };
        let r4 = at(10_000);
        assert!(!r4.ok);
        assert!(r4.lhs_mesh > 1.0);
        let r8 = at(100_000_000);
        assert!(r8.ok, "{r8:?}");
        let big_d = 4.0 * std::f64::consts::E;
        let expected = (1.0 + big_d.powf(1.5) * 1e6) * 1e-8;
        assert!((r8.lhs_mesh - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn quadratic_limit_does_not_decay() {
        let at = |n: usize| {
            let lat = build_lattice(n, 1.0, 1, LatticeMode::Recombining).unwrap();
            comparison_thresholds(1.0, 1.0, 2.0, 1.0, &lat)
        };
        let a = at(100);
        let b = at(1_000_000);
        assert!(!a.ok && !b.ok);
        let big_d = 4.0 * std::f64::consts::E;
        assert!((b.lhs_mesh - big_d * big_d).abs() / (big_d * big_d) < 1e-5);
    }

    #[test]
    fn reflexive_and_lifted() {
        let lat = build_lattice(12, 1.0, 1, LatticeMode::Recombining).unwrap();
        let d = DriverSpec::linear_y_power_z(0.2, 0.1, 1.5).unwrap();
        let xi = TerminalSpec::markov("clip", 1.0, |w| w[0].clamp(-1.0, 1.0)).unwrap();
        let cfg = SolveConfig::default();
        let same = compare(&lat, &d, &xi, &d, &xi, &cfg).unwrap();
        assert_eq!(same.min_gap, 0.0);
        assert_eq!(same.verdict, Verdict::Ordered);
        let lifted = d.shifted(1.0).unwrap();
        let r = compare(&lat, &lifted, &xi, &d, &xi, &cfg).unwrap();
        assert_eq!(r.min_gap, 0.0); // attained on the common leaves
        assert!(r.y0_first > r.y0_second);
        assert!(r.precondition_violations.is_empty());
        let back = compare(&lat, &d, &xi, &lifted, &xi, &cfg).unwrap();
        assert!(!back.precondition_violations.is_empty());
    }

    #[test]
    fn quadratic_counterexample_is_a_violation() {
        let n = 4;
        let lat = build_lattice(n, 1.0, 1, LatticeMode::Recombining).unwrap();
        let mut top = vec![0.0; n + 1];
        top[n] = 3.0;
        let xi1 = TerminalSpec::constant(3.0).unwrap();
        let xi2 = TerminalSpec::table(LatticeMode::Recombining, top, 3.0).unwrap();
        let q = DriverSpec::quadratic_z();
        let r = compare(&lat, &q, &xi1, &q, &xi2, &SolveConfig::default()).unwrap();
        assert_eq!(r.y0_first, 3.0);
        assert!(r.y0_second > 3.0);
        assert!(matches!(r.verdict, Verdict::Violated { level: 0, .. }));
    }
}
