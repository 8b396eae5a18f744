//! `Y_0` across a sequence of lattice sizes.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::AnalysisError;
use crate::driver::DriverSpec;
use crate::lattice::{Lattice, LatticeMode};
use crate::solver::{solve, SolveConfig, TerminalSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub y0: Option<f64>,
    /// `|Y_0^N - Y_0^{prev}|` against the closest earlier row that solved.
    pub diff: Option<f64>,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn diffs(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.diff).collect()
    }

    pub fn y0(&self, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n).and_then(|r| r.y0)
    }
}

/// Solves the same problem for every `N` in `steps` (strictly increasing).
/// Solver failures are recorded in their row and do not stop the study.
/// Wall time is recorded only if `timings` is set, so the table is
/// reproducible by default.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    steps: &[usize],
    horizon: f64,
    dim: usize,
    mode: LatticeMode,
    config: &SolveConfig,
    timings: bool,
) -> Result<ConvergenceTable, AnalysisError> {
    if let Some(w) = steps.windows(2).find(|w| w[0] >= w[1]) {
        return Err(AnalysisError::Precondition(format!(
            "N values must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    let runs: Vec<(Result<f64, String>, f64)> = steps
        .par_iter()
        .map(|&n| {
            let start = Instant::now();
            let y0 = Lattice::new(n, horizon, dim, mode)
                .map_err(|e| e.to_string())
                .and_then(|lat| {
                    solve(&lat, driver, terminal, config)
                        .map(|r| r.y0())
                        .map_err(|e| e.to_string())
                });
            (y0, start.elapsed().as_secs_f64())
        })
        .collect();

    let mut rows = Vec::with_capacity(steps.len());
    let mut prev: Option<f64> = None;
    for (&n, (res, secs)) in steps.iter().zip(runs) {
        let seconds = timings.then_some(secs);
        match res {
            Ok(y0) => {
                rows.push(ConvergenceRow {
                    n,
                    y0: Some(y0),
                    diff: prev.map(|p| (y0 - p).abs()),
                    seconds,
                    error: None,
                });
                prev = Some(y0);
            }
            Err(e) => rows.push(ConvergenceRow {
                n,
                y0: None,
                diff: None,
                seconds,
                error: Some(e),
            }),
        }
    }
    Ok(ConvergenceTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binomial_mean(n: usize, phi: impl Fn(f64) -> f64) -> f64 {
        // independent of the lattice: sum over up-counts with exact weights
        let s = (1.0 / n as f64).sqrt();
        let mut coef = 1.0f64;
        let mut total = 0.0;
        for k in 0..=n {
            total += coef * phi((2.0 * k as f64 - n as f64) * s);
            coef = coef * (n - k) as f64 / (k + 1) as f64;
        }
        total / 2f64.powi(n as i32)
    }

    #[test]
    fn zero_driver_is_binomial_expectation() {
        let phi = |x: f64| x.clamp(-0.5, 0.5) + 0.25 * x.abs().min(1.0);
        let xi = TerminalSpec::markov("phi", 1.0, move |w| phi(w[0])).unwrap();
        let t = convergence_study(
            &DriverSpec::zero(),
            &xi,
            &[3, 6, 12],
            1.0,
            1,
            LatticeMode::Recombining,
            &SolveConfig::default(),
            false,
        )
        .unwrap();
        for row in &t.rows {
            let exact = binomial_mean(row.n, phi);
            assert!((row.y0.unwrap() - exact).abs() < 1e-14);
            assert!(row.seconds.is_none());
        }
        assert_eq!(t.rows[0].diff, None);
        assert_eq!(t.diffs().len(), 2);
    }

    #[test]
    fn errors_stay_in_row() {
        // f = y at N = 1 has no solution
        let d = DriverSpec::linear_y_power_z(1.0, 0.0, 1.5).unwrap();
        let xi = TerminalSpec::constant(1.0).unwrap();
        let t = convergence_study(
            &d,
            &xi,
            &[1, 2, 4],
            1.0,
            1,
            LatticeMode::Recombining,
            &SolveConfig::default().without_bound_check(),
            true,
        )
        .unwrap();
        assert!(t.rows[0].error.is_some() && t.rows[0].y0.is_none());
        assert_eq!(t.rows[1].diff, None);
        assert!(t.rows[2].diff.is_some());
        assert!(t.rows.iter().all(|r| r.seconds.is_some()));
    }

    #[test]
    fn rejects_unordered() {
        let xi = TerminalSpec::constant(1.0).unwrap();
        let cfg = SolveConfig::default();
        let d = DriverSpec::zero();
        let r = convergence_study(&d, &xi, &[4, 4], 1.0, 1, LatticeMode::Recombining, &cfg, false);
        assert!(matches!(r, Err(AnalysisError::Precondition(_))));
    }
}
