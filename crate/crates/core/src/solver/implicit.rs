//! The implicit one-step equation `y - f(t_{i+1}, ·, y, z) Δ<W> = x`.
//!
//! With `L_y Δ<W> < 1` the map `A(y) = y - f(y) Δ<W>` has slope in
//! `[1 - L_y Δ<W>, 1 + L_y Δ<W>]`, so the root is unique and lies within
//! `|A(x) - x| / (1 - L_y Δ<W>)` of `x`.

use thiserror::Error;

use super::SolveConfig;
use crate::driver::{DriverError, DriverSpec, PathInfo};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error("step-size condition L_y·Δ<W> < 1 fails: L_y = {l_y}, Δ<W> = {dqv}")]
    StepSize { l_y: f64, dqv: f64 },
    #[error("the implicit equation y - f(y)·Δ<W> = {x:e} has no solution")]
    NoSolution { x: f64 },
    #[error(
        "root search for y - f(y)·Δ<W> = {x} stopped after {iterations} iterations (residual {residual:.3e})"
    )]
    NoConvergence { x: f64, iterations: u32, residual: f64 },
    #[error("conditional expectation {0} is not finite")]
    NonFinite(f64),
    #[error("driver value overflows near y = {x:e}; the solution has left the floating-point range")]
    Overflow { x: f64 },
    #[error(transparent)]
    Driver(#[from] DriverError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub y: f64,
    pub iterations: u32,
}

/// Solves `y - f(t_{i+1}, path, y, z) dqv = x` for `y`.
pub fn implicit_step(
    x: f64,
    z: &[f64],
    driver: &DriverSpec,
    path: &PathInfo<'_>,
    dqv: f64,
    config: &SolveConfig,
) -> Result<StepOutcome, StepError> {
    if !x.is_finite() {
        return Err(StepError::NonFinite(x));
    }
    let l_y = driver.constants().l_y;
    if !(l_y * dqv < 1.0) {
        return Err(StepError::StepSize { l_y, dqv });
    }
    let a = |y: f64| -> Result<f64, StepError> { Ok(y - driver.try_eval(path, y, z)? * dqv - x) };
    let tol = config.root_tol * (1.0 + x.abs());

    let r0 = a(x)?;
    if !r0.is_finite() {
        return Err(StepError::Overflow { x });
    }
    if r0.abs() <= tol {
        return Ok(StepOutcome { y: x, iterations: 0 });
    }

    // A is increasing; the root sits on the side opposite to the sign of A(x)
    let dir = if r0 < 0.0 { 1.0 } else { -1.0 };
    let mut span = r0.abs() / (1.0 - l_y * dqv) * (1.0 + 1e-9) + f64::EPSILON * (1.0 + x.abs());
    let mut far = x + dir * span;
    let mut r_far = a(far)?;
    let mut doublings = 0;
    while r_far.signum() == r0.signum() {
        if !r_far.is_finite() {
            return Err(StepError::Overflow { x: far });
        }
        doublings += 1;
        if doublings > 60 {
            return Err(StepError::NoSolution { x });
        }
        span *= 2.0;
        far = x + dir * span;
        r_far = a(far)?;
    }
    if !r_far.is_finite() {
        return Err(StepError::Overflow { x: far });
    }
    let (mut lo, mut hi) = if dir > 0.0 { (x, far) } else { (far, x) };

    let derivative = |y: f64, r: f64| -> Result<f64, StepError> {
        if let Some(fy) = driver.dy(y) {
            return Ok(1.0 - fy * dqv);
        }
        let h = 1e-7 * (1.0 + y.abs());
        Ok((a(y + h)? - r) / h)
    };

    let mut y = {
        let slope = derivative(x, r0)?;
        let guess = x - r0 / slope;
        if slope > 0.0 && guess > lo && guess < hi {
            guess
        } else {
            0.5 * (lo + hi)
        }
    };
    let mut best = (f64::INFINITY, y);
    for it in 1..=config.max_root_iters as u32 {
        let r = a(y)?;
        if r.abs() < best.0 {
            best = (r.abs(), y);
        }
        if r.abs() <= tol {
            return Ok(StepOutcome { y, iterations: it });
        }
        if r < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        if hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            // the bracket is at floating resolution; accept its best point
            return Ok(StepOutcome {
                y: best.1,
                iterations: it,
            });
        }
        let slope = derivative(y, r)?;
        let newton = y - r / slope;
        y = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(StepError::NoConvergence {
        x,
        iterations: config.max_root_iters as u32,
        residual: best.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{parse_driver, DriverConstants};
    use crate::lattice::TimeGrid;

    fn info() -> PathInfo<'static> {
        PathInfo::detached(1.0, &[], TimeGrid::new(1, 1.0).unwrap())
    }

    fn linear_y() -> DriverSpec {
        parse_driver(
            "y",
            DriverConstants {
                k: 1.0,
                q: 1.0,
                quadratic: false,
                l_y: 1.0,
                l_z: 0.0,
                l_w: None,
                convex_in_z: true,
                path_dependent: false,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn linear_equation() {
        let out = implicit_step(1.0, &[0.0], &linear_y(), &info(), 0.5, &SolveConfig::default()).unwrap();
        assert!((out.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_driver_is_identity() {
        for c in [-3.0, 0.0, 7.25] {
            let out = implicit_step(
                c,
                &[1.0],
                &DriverSpec::zero(),
                &info(),
                0.9,
                &SolveConfig::default(),
            )
            .unwrap();
            assert_eq!(out.y, c);
            assert_eq!(out.iterations, 0);
        }
    }

    #[test]
    fn unit_step_has_no_solution() {
        let err = implicit_step(1.0, &[0.0], &linear_y(), &info(), 1.0, &SolveConfig::default()).unwrap_err();
        assert!(matches!(err, StepError::StepSize { .. }));
    }

    #[test]
    fn nonlinear_in_y() {
        let d = DriverSpec::bound_driver(2.0, 1.5).unwrap();
        let cfg = SolveConfig::default();
        for x in [-5.0, -0.1, 0.0, 0.3, 4.0] {
            let out = implicit_step(x, &[1.3], &d, &info(), 0.2, &cfg).unwrap();
            let res = out.y - d.eval(&info(), out.y, &[1.3]) * 0.2 - x;
            assert!(res.abs() <= 1e-12 * (1.0 + x.abs()), "x {x}: residual {res}");
        }
    }
}
