//! Sample-based checks of declared driver constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DriverConstants, DriverError, DriverSpec, Expr, PathInfo, Scope};
use crate::lattice::TimeGrid;

/// Seed of the validation sampler; fixed so acceptance is reproducible.
pub const VALIDATION_SEED: u64 = 0x0b5d_e1a7_0000_2024;

/// Number of sampled points per validation.
pub const VALIDATION_POINTS: usize = 10_000;

const REL_TOL: f64 = 1e-9;

/// Half-widths of the sampling box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationBox {
    pub y: f64,
    pub z: f64,
    pub w: f64,
    /// Times are drawn from `[0, t_max]`.
    pub t_max: f64,
}

impl Default for ValidationBox {
    fn default() -> Self {
        Self {
            y: 10.0,
            z: 10.0,
            w: 10.0,
            t_max: 1.0,
        }
    }
}

/// Parses `text` as a driver over `d` dimensions and checks `constants`
/// on the default box.
pub fn parse_driver(text: &str, constants: DriverConstants, dim: usize) -> Result<DriverSpec, DriverError> {
    parse_driver_in(text, constants, dim, ValidationBox::default())
}

pub fn parse_driver_in(
    text: &str,
    constants: DriverConstants,
    dim: usize,
    bx: ValidationBox,
) -> Result<DriverSpec, DriverError> {
    constants.check()?;
    let expr = Expr::parse(text, Scope::Driver { dim })?;
    let spec = DriverSpec::from_expression(expr, constants);
    validate_driver(&spec, dim, bx)?;
    Ok(spec)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn within(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + REL_TOL * (1.0 + rhs.abs())
}

fn fmt_point(t: f64, y: f64, z: &[f64], w: &[f64]) -> String {
    format!("t = {t}, y = {y}, z = {z:?}, w = {w:?}")
}

/// Checks growth, y-Lipschitz, z-modulus, path-Lipschitz (when declared) and
/// midpoint convexity in z (when declared) on seeded samples.
pub fn validate_driver(spec: &DriverSpec, dim: usize, bx: ValidationBox) -> Result<(), DriverError> {
    let c = spec.constants().clone();
    c.check()?;
    let grid = TimeGrid::new(1, bx.t_max.max(f64::MIN_POSITIVE)).expect("positive horizon");
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    let sym = |r: &mut ChaCha8Rng, h: f64| if h > 0.0 { r.gen_range(-h..=h) } else { 0.0 };

    let mut z1 = vec![0.0; dim];
    let mut z2 = vec![0.0; dim];
    let mut zm = vec![0.0; dim];
    let mut w1 = vec![0.0; dim];
    let mut w2 = vec![0.0; dim];
    for n in 0..VALIDATION_POINTS {
        let t = rng.gen_range(0.0..=bx.t_max);
        let y1 = if n == 0 { 0.0 } else { sym(&mut rng, bx.y) };
        let y2 = sym(&mut rng, bx.y);
        // every other pair is local so the z-modulus is probed at small scales
        let local = n % 2 == 1;
        for k in 0..dim {
            z1[k] = if n == 0 { 0.0 } else { sym(&mut rng, bx.z) };
            z2[k] = if local {
                z1[k] + sym(&mut rng, 1e-3 * (1.0 + z1[k].abs()))
            } else {
                sym(&mut rng, bx.z)
            };
            zm[k] = 0.5 * (z1[k] + z2[k]);
            w1[k] = sym(&mut rng, bx.w);
            w2[k] = sym(&mut rng, bx.w);
        }
        let p1 = PathInfo::detached(t, &w1, grid);
        let p2 = PathInfo::detached(t, &w2, grid);
        let f = |p: &PathInfo<'_>, y: f64, z: &[f64]| spec.try_eval(p, y, z);

        let f11 = f(&p1, y1, &z1)?;
        let growth = c.k * (1.0 + y1.abs() + norm(&z1).powf(c.q));
        if !within(f11.abs(), growth) {
            return Err(DriverError::ConstantViolation {
                condition: "growth |f| <= K(1 + |y| + |z|^q)",
                witness: fmt_point(t, y1, &z1, &w1),
                lhs: f11.abs(),
                rhs: growth,
            });
        }

        let f21 = f(&p1, y2, &z1)?;
        let lip_y = c.l_y * (y1 - y2).abs();
        if !within((f11 - f21).abs(), lip_y) {
            return Err(DriverError::ConstantViolation {
                condition: "y-Lipschitz |f(y1) - f(y2)| <= L_y |y1 - y2|",
                witness: format!("{}, y2 = {y2}", fmt_point(t, y1, &z1, &w1)),
                lhs: (f11 - f21).abs(),
                rhs: lip_y,
            });
        }

        let f12 = f(&p1, y1, &z2)?;
        let dz: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| a - b).collect();
        let zmax = norm(&z1).max(norm(&z2));
        let modulus = c.l_z * (1.0 + zmax.powf(c.q / 2.0)) * norm(&dz);
        if !within((f11 - f12).abs(), modulus) {
            return Err(DriverError::ConstantViolation {
                condition: "z-modulus |f(z1) - f(z2)| <= L_z (1 + max(|z1|,|z2|)^(q/2)) |z1 - z2|",
                witness: format!("{}, z2 = {z2:?}", fmt_point(t, y1, &z1, &w1)),
                lhs: (f11 - f12).abs(),
                rhs: modulus,
            });
        }

        if let Some(l_w) = c.l_w {
            let fw = f(&p2, y1, &z1)?;
            let dw: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a - b).collect();
            let bound = l_w * norm(&dw);
            if !within((f11 - fw).abs(), bound) {
                return Err(DriverError::ConstantViolation {
                    condition: "path-Lipschitz |f(w1) - f(w2)| <= L_w |w1 - w2|",
                    witness: format!("{}, w2 = {w2:?}", fmt_point(t, y1, &z1, &w1)),
                    lhs: (f11 - fw).abs(),
                    rhs: bound,
                });
            }
        }

        if c.convex_in_z {
            let fm = f(&p1, y1, &zm)?;
            let chord = 0.5 * (f11 + f12);
            if !within(fm, chord) {
                return Err(DriverError::ConstantViolation {
                    condition: "convexity in z (midpoint)",
                    witness: format!("{}, z2 = {z2:?}", fmt_point(t, y1, &z1, &w1)),
                    lhs: fm,
                    rhs: chord,
                });
            }
        }
    }
    Ok(())
}
