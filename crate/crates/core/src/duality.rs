//! Dual representation of solutions with drivers convex in `z`.
//!
//! A control `μ` is a right-constant d-vector field, stored at the parent of
//! each step like `Z`. It is admissible if `μ·Δw > -1` on every branch, and
//! then tilts the branch weights to `2^{-d}(1 + μ·Δw_b)`. Under the tilted
//! measure
//!
//! ```text
//! V_i = E^μ[V_{i+1} | node] - g(t_{i+1}, Y_i, μ_i) Δ<W>,   V_N = ξ,
//! ```
//!
//! never exceeds `Y`, with equality when `μ` is a subgradient of the driver at
//! the solution's `Z`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::driver::{conjugate, subgradient_in_z, DriverError, DriverSpec, FENCHEL_TOL};
use crate::field::{AdaptedField, Timing};
use crate::lattice::{Lattice, LatticeError};
use crate::solver::{apriori_bound, NodeContext, SolveResult, PAR_MIN_NODES};

/// Control process `μ`, one d-vector per node at levels `0..N`.
pub type ControlField = AdaptedField;

/// Entropy comparisons accept `lhs <= rhs + ENTROPY_TOL`.
pub const ENTROPY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualityError {
    #[error(
        "control is not admissible at level {level}, node {node}: 1 + μ·Δw = {value} on branch {branch}"
    )]
    Inadmissible {
        level: usize,
        node: usize,
        branch: usize,
        value: f64,
    },
    #[error("Fenchel equality fails at level {level}, node {node}: residual {residual:e}")]
    Fenchel {
        level: usize,
        node: usize,
        residual: f64,
    },
    #[error("driver failed at level {level}, node {node}: {source}")]
    Driver {
        level: usize,
        node: usize,
        source: DriverError,
    },
    #[error("control field shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Runs `f` over the nodes of one level, in parallel on wide levels; the
/// reported error is the one at the smallest node index.
fn per_node<T: Send, F>(size: usize, f: F) -> Result<Vec<T>, DualityError>
where
    F: Fn(usize) -> Result<T, DualityError> + Sync + Send,
{
    let results: Vec<Result<T, DualityError>> = if size >= PAR_MIN_NODES {
        (0..size).into_par_iter().map(&f).collect()
    } else {
        (0..size).map(&f).collect()
    };
    results.into_iter().collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Branch weights `2^{-d}(1 + μ·Δw_b)` in branch order.
pub fn tilt_probabilities(lattice: &Lattice, mu: &[f64]) -> Result<Vec<f64>, DualityError> {
    tilt_at(lattice, mu, 0, 0)
}

fn tilt_at(lattice: &Lattice, mu: &[f64], level: usize, node: usize) -> Result<Vec<f64>, DualityError> {
    let p = lattice.branch_probability();
    (0..lattice.branch_count())
        .map(|b| {
            let value = 1.0 + dot(mu, &lattice.increments(b));
            if value > 0.0 {
                Ok(p * value)
            } else {
                Err(DualityError::Inadmissible {
                    level,
                    node,
                    branch: b,
                    value,
                })
            }
        })
        .collect()
}

fn check_shape(lattice: &Lattice, mu: &ControlField) -> Result<(), DualityError> {
    let n = lattice.steps();
    if mu.level_count() != n || mu.arity() != lattice.dim() {
        return Err(DualityError::Shape(format!(
            "expected {n} levels of {}-vectors, got {} levels of {}-vectors",
            lattice.dim(),
            mu.level_count(),
            mu.arity()
        )));
    }
    for i in 0..n {
        if mu.nodes_at(i) != lattice.level_size(i) {
            return Err(DualityError::Shape(format!(
                "level {i} has {} nodes, the lattice has {}",
                mu.nodes_at(i),
                lattice.level_size(i)
            )));
        }
    }
    Ok(())
}

/// Checks `μ·Δw > -1` on every branch of every node.
pub fn check_admissible(lattice: &Lattice, mu: &ControlField) -> Result<(), DualityError> {
    check_shape(lattice, mu)?;
    for i in 0..lattice.steps() {
        per_node(lattice.level_size(i), |node| {
            tilt_at(lattice, mu.get(i, node), i, node).map(|_| ())
        })?;
    }
    Ok(())
}

/// The zero control.
pub fn zero_control(lattice: &Lattice) -> ControlField {
    let d = lattice.dim();
    let levels = (0..lattice.steps())
        .map(|i| vec![0.0; lattice.level_size(i) * d])
        .collect();
    AdaptedField::new(Timing::RightConstant, d, levels)
}

/// Seeded control with `μ^k` uniform in `±0.9 / (d ||ΔW||_∞)`, so
/// `|μ·Δw| <= 0.9` on every branch.
pub fn random_admissible_control(lattice: &Lattice, seed: u64) -> ControlField {
    let d = lattice.dim();
    let r = 0.9 / (d as f64 * lattice.step());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels = (0..lattice.steps())
        .map(|i| {
            (0..lattice.level_size(i) * d)
                .map(|_| rng.gen_range(-r..=r))
                .collect()
        })
        .collect();
    AdaptedField::new(Timing::RightConstant, d, levels)
}

/// Dual values `V` for the control `μ`, using `Y` and the terminal values of
/// a primal solve. `g = +∞` at a node gives `V = -∞` there and at all
/// ancestors.
pub fn dual_value(
    result: &SolveResult,
    driver: &DriverSpec,
    mu: &ControlField,
) -> Result<AdaptedField, DualityError> {
    let lat = &result.lattice;
    check_shape(lat, mu)?;
    let n = lat.steps();
    let grid = lat.grid();
    let dqv = lat.dqv();
    let hist = driver.is_path_dependent();
    let mut levels: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    levels[n] = result.y.level(n).to_vec();
    for i in (0..n).rev() {
        let next = &levels[i + 1];
        let level = per_node(lat.level_size(i), |node| {
            let m = mu.get(i, node);
            let p = tilt_at(lat, m, i, node)?;
            let ctx = NodeContext::new(lat, i, node, hist)?;
            let g = conjugate(driver, &ctx.info(grid), result.y.scalar(i, node), m).map_err(|source| {
                DualityError::Driver {
                    level: i,
                    node,
                    source,
                }
            })?;
            if g.is_infinite() {
                return Ok(f64::NEG_INFINITY);
            }
            let tilted: f64 = lat.children(i, node).zip(&p).map(|(c, w)| w * next[c]).sum();
            Ok(tilted - g.value * dqv)
        })?;
        levels[i] = level;
    }
    Ok(AdaptedField::new(Timing::LeftConstant, 1, levels))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Maximizer {
    pub mu: ControlField,
    /// Largest `|f(Z) + g(μ̂) - μ̂·Z|` over nodes.
    pub max_fenchel_residual: f64,
}

/// `μ̂ = ∂_z f(t_{i+1}, Y_i, Z_i)` at every node, with the Fenchel equality
/// and admissibility verified node by node.
pub fn maximizer(result: &SolveResult, driver: &DriverSpec) -> Result<Maximizer, DualityError> {
    let lat = &result.lattice;
    let grid = lat.grid();
    let d = lat.dim();
    let hist = driver.is_path_dependent();
    let mut levels = Vec::with_capacity(lat.steps());
    let mut worst: f64 = 0.0;
    for i in 0..lat.steps() {
        let nodes = per_node(lat.level_size(i), |node| {
            let ctx = NodeContext::new(lat, i, node, hist)?;
            let info = ctx.info(grid);
            let y = result.y.scalar(i, node);
            let z = result.z.get(i, node);
            let wrap = |source| DualityError::Driver {
                level: i,
                node,
                source,
            };
            let m = match subgradient_in_z(driver, &info, y, z) {
                Ok(m) => m,
                Err(DriverError::Subgradient { residual, .. }) => {
                    return Err(DualityError::Fenchel {
                        level: i,
                        node,
                        residual,
                    })
                }
                Err(e) => return Err(wrap(e)),
            };
            let f = driver.try_eval(&info, y, z).map_err(wrap)?;
            let g = conjugate(driver, &info, y, &m).map_err(wrap)?;
            let residual = (f + g.value - dot(&m, z)).abs();
            if !(residual <= FENCHEL_TOL * (1.0 + f.abs())) {
                return Err(DualityError::Fenchel {
                    level: i,
                    node,
                    residual,
                });
            }
            tilt_at(lat, &m, i, node)?;
            Ok((m, residual))
        })?;
        let mut flat = Vec::with_capacity(nodes.len() * d);
        for (m, r) in nodes {
            worst = worst.max(r);
            flat.extend(m);
        }
        levels.push(flat);
    }
    Ok(Maximizer {
        mu: AdaptedField::new(Timing::RightConstant, d, levels),
        max_fenchel_residual: worst,
    })
}

/// Conditional relative entropy and quadratic variation of `μ` at every node:
/// `lhs = E[Λ log Λ | node]` with `Λ` the density from the node to `T`, and
/// `rhs = E^μ[Σ_{j >= i} |μ_j|² Δ<W> | node]`.
pub fn entropy_fields(
    lattice: &Lattice,
    mu: &ControlField,
) -> Result<(AdaptedField, AdaptedField), DualityError> {
    check_shape(lattice, mu)?;
    let n = lattice.steps();
    let dqv = lattice.dqv();
    let mut lhs = vec![Vec::new(); n + 1];
    let mut rhs = vec![Vec::new(); n + 1];
    lhs[n] = vec![0.0; lattice.level_size(n)];
    rhs[n] = vec![0.0; lattice.level_size(n)];
    for i in (0..n).rev() {
        let (ln, rn) = (&lhs[i + 1], &rhs[i + 1]);
        let pairs = per_node(lattice.level_size(i), |node| {
            let m = mu.get(i, node);
            let p = tilt_at(lattice, m, i, node)?;
            let base = lattice.branch_probability();
            let mut l = 0.0;
            let mut r = dot(m, m) * dqv;
            for (b, c) in lattice.children(i, node).enumerate() {
                l += p[b] * ((p[b] / base).ln() + ln[c]);
                r += p[b] * rn[c];
            }
            Ok((l, r))
        })?;
        let (l, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        lhs[i] = l;
        rhs[i] = r;
    }
    Ok((
        AdaptedField::new(Timing::LeftConstant, 1, lhs),
        AdaptedField::new(Timing::LeftConstant, 1, rhs),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    /// Root values.
    pub lhs: f64,
    pub rhs: f64,
    /// `min (rhs - lhs)` over all nodes, and where it is attained.
    pub worst_margin: f64,
    pub worst_level: usize,
    pub worst_node: usize,
    pub holds_everywhere: bool,
}

/// Checks the entropy inequality at the root and every other node.
pub fn entropy_check(lattice: &Lattice, mu: &ControlField) -> Result<EntropyReport, DualityError> {
    let (l, r) = entropy_fields(lattice, mu)?;
    let mut worst = (f64::INFINITY, 0, 0);
    for i in 0..=lattice.steps() {
        for (node, (a, b)) in l.level(i).iter().zip(r.level(i)).enumerate() {
            if b - a < worst.0 {
                worst = (b - a, i, node);
            }
        }
    }
    Ok(EntropyReport {
        lhs: l.scalar(0, 0),
        rhs: r.scalar(0, 0),
        worst_margin: worst.0,
        worst_level: worst.1,
        worst_node: worst.2,
        holds_everywhere: worst.0 >= -ENTROPY_TOL,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityThreshold {
    pub lhs: f64,
    pub ok: bool,
}

/// `√d L a Δ^{1/2} + d^{(2+q)/4} L C̄^{q/2} a Δ^{(2-q)/4}` with
/// `C̄ = (C+1)exp(KT)` and `a = ||ΔW||_∞ / √Δ`; below 1 the subgradient
/// control is admissible.
pub fn duality_threshold(c: f64, k: f64, l: f64, q: f64, lattice: &Lattice) -> DualityThreshold {
    let d = lattice.dim() as f64;
    let dqv = lattice.dqv();
    let a = lattice.step() / dqv.sqrt();
    let c_bar = (c + 1.0) * (k * lattice.horizon()).exp();
    let lhs = d.sqrt() * l * a * dqv.sqrt()
        + d.powf((2.0 + q) / 4.0) * l * c_bar.powf(q / 2.0) * a * dqv.powf((2.0 - q) / 4.0);
    DualityThreshold {
        lhs,
        ok: (1.0..2.0).contains(&q) && lhs < 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    /// `max_i E^μ[Σ_{j >= i} |μ_j|² Δ<W> | node]`.
    pub value: f64,
    /// Numeric coercivity `inf_{|μ| >= 1} (g(μ) + f(0)) / |μ|²`, sampled.
    pub c3: f64,
    /// `(C + C̄ + K(1 + C̄)T) / C₃`, infinite when `C₃ = 0`.
    pub r_bound: f64,
}

fn coercivity(result: &SolveResult, driver: &DriverSpec) -> Result<f64, DualityError> {
    let lat = &result.lattice;
    let d = lat.dim();
    let hist = driver.is_path_dependent();
    let ctx = NodeContext::new(lat, 0, 0, hist)?;
    let info = ctx.info(lat.grid());
    let y = result.y0();
    let wrap = |source| DualityError::Driver {
        level: 0,
        node: 0,
        source,
    };
    let f0 = driver.try_eval(&info, y, &vec![0.0; d]).map_err(wrap)?;
    let mut best = f64::INFINITY;
    for k in 0..d {
        for sign in [-1.0, 1.0] {
            for j in 0..=40 {
                let r = 10f64.powf(j as f64 / 10.0);
                let mut m = vec![0.0; d];
                m[k] = sign * r;
                let g = conjugate(driver, &info, y, &m).map_err(wrap)?;
                best = best.min((g.value + f0) / (r * r));
            }
        }
    }
    Ok(best.max(0.0))
}

/// Largest conditional quadratic variation of `μ` over nodes, next to the
/// bound built from the terminal bound `c`.
pub fn moment_bound(
    result: &SolveResult,
    driver: &DriverSpec,
    mu: &ControlField,
    c: f64,
) -> Result<MomentReport, DualityError> {
    let lat = &result.lattice;
    let (_, r) = entropy_fields(lat, mu)?;
    let value = r.max_abs();
    let k = driver.constants().k;
    let t = lat.horizon();
    let c_bar = apriori_bound(c, k, 0.0, t);
    let c3 = coercivity(result, driver)?;
    let r_bound = if c3 > 0.0 {
        (c + c_bar + k * (1.0 + c_bar) * t) / c3
    } else {
        f64::INFINITY
    };
    Ok(MomentReport { value, c3, r_bound })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualCertificate {
    pub mu_hat: ControlField,
    pub dual_value_at_root: f64,
    /// `Y_0 - V_0`.
    pub gap: f64,
    /// `max |V - Y|` over all nodes.
    pub max_node_gap: f64,
    pub max_fenchel_residual: f64,
    pub entropy: EntropyReport,
    pub moment: MomentReport,
    pub threshold: DualityThreshold,
}

/// Builds `μ̂`, its dual values, and the entropy and moment diagnostics.
pub fn certify(
    result: &SolveResult,
    driver: &DriverSpec,
    terminal_bound: f64,
) -> Result<DualCertificate, DualityError> {
    let lat = &result.lattice;
    let m = maximizer(result, driver)?;
    let v = dual_value(result, driver, &m.mu)?;
    let mut max_node_gap: f64 = 0.0;
    for i in 0..=lat.steps() {
        for (a, b) in v.level(i).iter().zip(result.y.level(i)) {
            max_node_gap = max_node_gap.max((a - b).abs());
        }
    }
    let entropy = entropy_check(lat, &m.mu)?;
    let moment = moment_bound(result, driver, &m.mu, terminal_bound)?;
    let consts = driver.constants();
    let threshold = duality_threshold(terminal_bound, consts.k, consts.l_z, consts.q, lat);
    let v0 = v.scalar(0, 0);
    Ok(DualCertificate {
        mu_hat: m.mu,
        dual_value_at_root: v0,
        gap: result.y0() - v0,
        max_node_gap,
        max_fenchel_residual: m.max_fenchel_residual,
        entropy,
        moment,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, LatticeMode};
    use crate::solver::{solve, SolveConfig, TerminalSpec};

    fn lat(n: usize, d: usize) -> Lattice {
        build_lattice(n, 1.0, d, LatticeMode::Recombining).unwrap()
    }

    #[test]
    fn tilt_examples() {
        let l = lat(1, 1);
        assert_eq!(tilt_probabilities(&l, &[0.0]).unwrap(), vec![0.5, 0.5]);
        // branch 0 is the down move
        assert_eq!(tilt_probabilities(&l, &[0.5]).unwrap(), vec![0.25, 0.75]);
        assert!(matches!(
            tilt_probabilities(&l, &[1.0]),
            Err(DualityError::Inadmissible { branch: 0, .. })
        ));
        let l2 = lat(4, 2);
        let p = tilt_probabilities(&l2, &[0.3, -0.7]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..2 {
            let drift: f64 = (0..4).map(|b| p[b] * l2.increment(b, k)).sum();
            assert!((drift - [0.3, -0.7][k] * l2.dqv()).abs() < 1e-15);
        }
    }

    #[test]
    fn entropy_two_branches() {
        let l = lat(1, 1);
        let mu = AdaptedField::new(Timing::RightConstant, 1, vec![vec![0.5]]);
        let e = entropy_check(&l, &mu).unwrap();
        let expected = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((e.lhs - expected).abs() < 1e-15);
        assert!((e.lhs - 0.130_812).abs() < 1e-6);
        assert_eq!(e.rhs, 0.25);
        let z = entropy_check(&l, &zero_control(&l)).unwrap();
        assert_eq!((z.lhs, z.rhs), (0.0, 0.0));
    }

    #[test]
    fn zero_driver_expectation() {
        let l = lat(6, 1);
        let xi = TerminalSpec::markov("w", 3.0, |w| w[0]).unwrap();
        let r = solve(&l, &DriverSpec::zero(), &xi, &SolveConfig::default()).unwrap();
        let v = dual_value(&r, &DriverSpec::zero(), &zero_control(&l)).unwrap();
        assert!(v.scalar(0, 0).abs() < 1e-15);
        let m = maximizer(&r, &DriverSpec::zero()).unwrap();
        assert_eq!(m.mu.max_abs(), 0.0);
        // any nonzero μ costs g = +∞ for the zero driver
        let rnd = random_admissible_control(&l, 3);
        let v = dual_value(&r, &DriverSpec::zero(), &rnd).unwrap();
        assert_eq!(v.scalar(0, 0), f64::NEG_INFINITY);
    }

    #[test]
    fn strong_and_weak_duality() {
        let l = lat(30, 1);
        let d = DriverSpec::linear_y_power_z(1.0, 1.0, 1.5).unwrap();
        let xi = TerminalSpec::expression("sign(w1) * min(sqrt(abs(w1)), 1)", 1.0, 1, vec![]).unwrap();
        let r = solve(&l, &d, &xi, &SolveConfig::default()).unwrap();
        let cert = certify(&r, &d, 1.0).unwrap();
        assert!(
            cert.max_node_gap <= 1e-8 * (1.0 + r.max_abs_y()),
            "{}",
            cert.max_node_gap
        );
        assert!(cert.max_fenchel_residual <= 1e-8);
        assert!(cert.entropy.holds_everywhere);
        for seed in 0..5 {
            let mu = random_admissible_control(&l, seed);
            let v = dual_value(&r, &d, &mu).unwrap();
            for i in 0..=30 {
                for (a, b) in v.level(i).iter().zip(r.y.level(i)) {
                    assert!(*a <= b + 1e-10);
                }
            }
        }
    }

    #[test]
    fn subgradient_examples() {
        use crate::driver::PathInfo;
        use crate::lattice::TimeGrid;
        let w = [0.0];
        let info = PathInfo::detached(1.0, &w, TimeGrid::new(1, 1.0).unwrap());
        let p = DriverSpec::power_z(1.5).unwrap();
        let m = subgradient_in_z(&p, &info, 0.0, &[4.0]).unwrap();
        assert!((m[0] - 3.0).abs() < 1e-15);
        let g = conjugate(&p, &info, 0.0, &m).unwrap().value;
        assert!((g - 4.0).abs() < 1e-12);
        let q = DriverSpec::quadratic_z();
        let m = subgradient_in_z(&q, &info, 0.0, &[1.0]).unwrap();
        assert_eq!(m, vec![2.0]);
        assert!((conjugate(&q, &info, 0.0, &m).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(duality_threshold(1.0, 1.0, 0.0, 1.5, &lat(10, 1)).lhs, 0.0);
        assert!(duality_threshold(1.0, 1.0, 1.0, 1.5, &lat(1_000_000, 1)).ok);
        assert!(!duality_threshold(1.0, 1.0, 1.0, 1.5, &lat(1, 1)).ok);
    }

    #[test]
    fn moment_scales_quadratically_for_deterministic_controls() {
        let l = lat(8, 1);
        let levels = |s: f64| (0..8).map(|i| vec![0.2 * s; i + 1]).collect::<Vec<_>>();
        let mu1 = AdaptedField::new(Timing::RightConstant, 1, levels(1.0));
        let mu2 = AdaptedField::new(Timing::RightConstant, 1, levels(2.0));
        let r1 = entropy_fields(&l, &mu1).unwrap().1.max_abs();
        let r2 = entropy_fields(&l, &mu2).unwrap().1.max_abs();
        assert!((r2 / r1 - 4.0).abs() < 1e-12);
    }
}
