//! Stability of solutions under perturbations of driver and terminal.

use serde::Serialize;

use super::comparison::solve_pair;
use super::AnalysisError;
use crate::driver::DriverSpec;
use crate::lattice::Lattice;
use crate::solver::{apriori_bound, NodeContext, SolveConfig, TerminalSpec};

/// `(exp(KT) + 1)(T + 1)`.
pub fn stability_constant(k: f64, horizon: f64) -> f64 {
    ((k * horizon).exp() + 1.0) * (horizon + 1.0)
}

/// Uniform bound on `|Z|` for Lipschitz terminals: `(exp(KT) + 1)(T + 1)(C + K) d`.
pub fn z_bound(c: f64, k: f64, horizon: f64, dim: usize) -> f64 {
    stability_constant(k, horizon) * (c + k) * dim as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    /// `max |Y1 - Y2|` over all nodes.
    pub observed: f64,
    /// `D (||Δf||_∞ + ||Δξ||_∞)`.
    pub bound: f64,
    pub constant: f64,
    /// Sampled estimate of `||f1 - f2||_∞` on the solution box.
    pub delta_f: f64,
    pub delta_xi: f64,
    pub y_box: f64,
    pub z_box: f64,
}

const GRID: usize = 9;

fn linspace(h: f64) -> impl Iterator<Item = f64> {
    (0..GRID).map(move |j| -h + 2.0 * h * j as f64 / (GRID - 1) as f64)
}

/// Observed sup-distance of two solutions and its a-priori bound.
///
/// `||f1 - f2||_∞` is estimated at every node on a grid of the box
/// `|y| <= max(a-priori bound, max|Y|)`, `|z| <= max(Z bound, max|Z|)`,
/// together with the points the two solutions actually visit.
pub fn stability_gap(
    lattice: &Lattice,
    driver1: &DriverSpec,
    terminal1: &TerminalSpec,
    driver2: &DriverSpec,
    terminal2: &TerminalSpec,
    config: &SolveConfig,
) -> Result<StabilityReport, AnalysisError> {
    let (r1, r2) = solve_pair(lattice, driver1, terminal1, driver2, terminal2, config)?;
    let lat = &r1.lattice;
    let grid = lat.grid();
    let horizon = lat.horizon();
    let d = lat.dim();
    let n = lat.steps();
    let k = driver1.constants().k.max(driver2.constants().k);
    let c = terminal1.bound().max(terminal2.bound());

    let mut observed: f64 = 0.0;
    for i in 0..=n {
        for (a, b) in r1.y.level(i).iter().zip(r2.y.level(i)) {
            observed = observed.max((a - b).abs());
        }
    }
    let delta_xi =
        r1.y.level(n)
            .iter()
            .zip(r2.y.level(n))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));

    let y_box = apriori_bound(c, k, 0.0, horizon)
        .max(r1.max_abs_y())
        .max(r2.max_abs_y());
    let z_box = z_bound(c, k, horizon, d).max(r1.max_abs_z()).max(r2.max_abs_z());
    let hist = driver1.is_path_dependent() || driver2.is_path_dependent();

    // bounded work on deep full trees: visit at most this many nodes per level
    const NODES_PER_LEVEL: usize = 512;
    let mut delta_f: f64 = 0.0;
    for i in 0..n {
        let size = lat.level_size(i);
        let stride = size.div_ceil(NODES_PER_LEVEL).max(1);
        for node in (0..size).step_by(stride) {
            let ctx = NodeContext::new(lat, i, node, hist)?;
            let info = ctx.info(grid);
            let mut ys: Vec<f64> = linspace(y_box).collect();
            ys.push(r1.y.scalar(i, node));
            ys.push(r2.y.scalar(i, node));
            let mut zs: Vec<Vec<f64>> = vec![r1.z.get(i, node).to_vec(), r2.z.get(i, node).to_vec()];
            if d == 1 {
                zs.extend(linspace(z_box).map(|v| vec![v]));
            } else {
                zs.push(vec![0.0; d]);
                for kk in 0..d {
                    for s in [-z_box, z_box] {
                        let mut v = vec![0.0; d];
                        v[kk] = s;
                        zs.push(v);
                    }
                }
            }
            for &y in &ys {
                for z in &zs {
                    let f1 = driver1.try_eval(&info, y, z)?;
                    let f2 = driver2.try_eval(&info, y, z)?;
                    delta_f = delta_f.max((f1 - f2).abs());
                }
            }
        }
    }

    let constant = stability_constant(k, horizon);
    Ok(StabilityReport {
        observed,
        bound: constant * (delta_f + delta_xi),
        constant,
        delta_f,
        delta_xi,
        y_box,
        z_box,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_lattice, LatticeMode};

    #[test]
    fn identical_inputs() {
        let lat = build_lattice(10, 1.0, 1, LatticeMode::Recombining).unwrap();
        let d = DriverSpec::linear_y_power_z(0.5, 0.5, 1.5).unwrap();
        let xi = TerminalSpec::markov("clip", 1.0, |w| w[0].clamp(-1.0, 1.0)).unwrap();
        let r = stability_gap(&lat, &d, &xi, &d, &xi, &SolveConfig::default()).unwrap();
        assert_eq!((r.observed, r.bound), (0.0, 0.0));
    }

    #[test]
    fn terminal_and_driver_shifts() {
        let lat = build_lattice(20, 1.0, 1, LatticeMode::Recombining).unwrap();
        let d = DriverSpec::linear_y_power_z(0.5, 0.5, 1.5).unwrap();
        let xi = TerminalSpec::markov("clip", 0.9, |w| (0.9 * w[0]).clamp(-0.9, 0.9)).unwrap();
        let xi_up = TerminalSpec::markov("clip+", 1.0, |w| (0.9 * w[0]).clamp(-0.9, 0.9) + 0.1).unwrap();
        let r = stability_gap(&lat, &d, &xi_up, &d, &xi, &SolveConfig::default()).unwrap();
        assert!((r.delta_xi - 0.1).abs() < 1e-15);
        assert_eq!(r.delta_f, 0.0);
        assert!(r.observed <= r.bound);

        let lifted = d.shifted(0.05).unwrap();
        let r = stability_gap(&lat, &lifted, &xi, &d, &xi, &SolveConfig::default()).unwrap();
        assert!((r.delta_f - 0.05).abs() < 1e-12);
        assert!(r.observed > 0.0 && r.observed <= r.bound);
    }
}
