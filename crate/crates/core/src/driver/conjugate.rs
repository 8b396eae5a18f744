//! Convex conjugate `g(t, y, μ) = sup_z { μ·z - f(t, y, z) }` and subgradients in `z`.
//!
//! Drivers of the form `a(y) + s |z|^p` use closed forms. Everything else is
//! maximized numerically: probe rays detect unbounded objectives, then a
//! cyclic coordinate search runs golden-section line searches on brackets
//! grown until the concave objective drops on both flanks.

use serde::Serialize;

use super::{DriverError, DriverSpec, PathInfo};

/// Radius beyond which an increasing ray is taken as unbounded.
const UNBOUNDED_RADIUS: f64 = 1e12;
const MAX_SWEEPS: usize = 500;
/// Tolerance of the Fenchel equality `f(z) + g(μ) = μ·z`, relative to `1 + |f(z)|`.
pub const FENCHEL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConjugateResult {
    /// `+∞` when the objective is unbounded above.
    pub value: f64,
    /// A maximizer when the supremum is finite and attained.
    pub maximizer: Option<Vec<f64>>,
}

impl ConjugateResult {
    fn infinite() -> Self {
        Self {
            value: f64::INFINITY,
            maximizer: None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.value == f64::INFINITY
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn require_convex(driver: &DriverSpec) -> Result<(), DriverError> {
    if driver.constants().convex_in_z {
        Ok(())
    } else {
        Err(DriverError::NotConvex(driver.label().to_string()))
    }
}

/// `g(t_{i+1}, y, μ)` with its maximizer.
pub fn conjugate(
    driver: &DriverSpec,
    path: &PathInfo<'_>,
    y: f64,
    mu: &[f64],
) -> Result<ConjugateResult, DriverError> {
    require_convex(driver)?;
    if let Some((a, s, p)) = driver.separable(y) {
        return Ok(separable_conjugate(a, s, p, mu));
    }
    numeric_conjugate(driver, path, y, mu)
}

/// Conjugate of `z ↦ a + s |z|^p`.
pub fn separable_conjugate(a: f64, s: f64, p: f64, mu: &[f64]) -> ConjugateResult {
    let m = norm(mu);
    let zero = || ConjugateResult {
        value: -a,
        maximizer: Some(vec![0.0; mu.len()]),
    };
    if s == 0.0 {
        return if m == 0.0 {
            zero()
        } else {
            ConjugateResult::infinite()
        };
    }
    if p == 1.0 {
        return if m <= s {
            zero()
        } else {
            ConjugateResult::infinite()
        };
    }
    if m == 0.0 {
        return zero();
    }
    let r = (m / (s * p)).powf(1.0 / (p - 1.0));
    ConjugateResult {
        value: (p - 1.0) * s * r.powf(p) - a,
        maximizer: Some(mu.iter().map(|v| v / m * r).collect()),
    }
}

struct Objective<'a> {
    driver: &'a DriverSpec,
    path: &'a PathInfo<'a>,
    y: f64,
    mu: &'a [f64],
}

impl Objective<'_> {
    fn at(&self, z: &[f64]) -> Result<f64, DriverError> {
        Ok(dot(self.mu, z) - self.driver.try_eval(self.path, self.y, z)?)
    }
}

fn numeric_conjugate(
    driver: &DriverSpec,
    path: &PathInfo<'_>,
    y: f64,
    mu: &[f64],
) -> Result<ConjugateResult, DriverError> {
    let d = mu.len();
    let obj = Objective { driver, path, y, mu };

    let mut rays: Vec<Vec<f64>> = Vec::with_capacity(2 * d + 1);
    for k in 0..d {
        for sign in [1.0, -1.0] {
            let mut v = vec![0.0; d];
            v[k] = sign;
            rays.push(v);
        }
    }
    let m = norm(mu);
    if m > 0.0 {
        rays.push(mu.iter().map(|v| v / m).collect());
    }
    let mut probe = vec![0.0; d];
    for v in &rays {
        let mut rho = 1.0;
        let mut prev = obj.at(v)?;
        loop {
            for (p, vk) in probe.iter_mut().zip(v) {
                *p = 2.0 * rho * vk;
            }
            let next = obj.at(&probe)?;
            if next <= prev {
                break;
            }
            rho *= 2.0;
            prev = next;
            if rho > UNBOUNDED_RADIUS {
                return Ok(ConjugateResult::infinite());
            }
        }
    }

    let mut z = vec![0.0; d];
    let mut value = obj.at(&z)?;
    for _ in 0..MAX_SWEEPS {
        let before = value;
        let mut moved: f64 = 0.0;
        for k in 0..d {
            let old = z[k];
            let Some((best, v)) = line_search(&obj, &mut z, k, 1.0 + m)? else {
                return Ok(ConjugateResult::infinite());
            };
            z[k] = best;
            value = v;
            moved = moved.max((best - old).abs());
        }
        if moved <= 1e-12 * (1.0 + norm(&z)) && (value - before).abs() <= 1e-15 * (1.0 + value.abs()) {
            break;
        }
    }
    Ok(ConjugateResult {
        value,
        maximizer: Some(z),
    })
}

/// Maximizes the objective along coordinate `k`; `None` if it is unbounded.
fn line_search(
    obj: &Objective<'_>,
    z: &mut [f64],
    k: usize,
    width: f64,
) -> Result<Option<(f64, f64)>, DriverError> {
    let c = z[k];
    let eval = |s: f64, z: &mut [f64]| -> Result<f64, DriverError> {
        z[k] = s;
        obj.at(z)
    };
    let fc = eval(c, z)?;
    let mut h = width.max(c.abs());
    while eval(c + h, z)? > fc {
        h *= 2.0;
        if h > UNBOUNDED_RADIUS {
            return Ok(None);
        }
    }
    let hi = c + h;
    let mut h = width.max(c.abs());
    while eval(c - h, z)? > fc {
        h *= 2.0;
        if h > UNBOUNDED_RADIUS {
            return Ok(None);
        }
    }
    let lo = c - h;

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = eval(x1, z)?;
    let mut f2 = eval(x2, z)?;
    let tol = 1e-13 * (1.0 + c.abs() + width);
    while b - a > tol {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = eval(x2, z)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = eval(x1, z)?;
        }
        if x2 <= x1 {
            break;
        }
    }
    // never return worse than the starting point
    let (mut best, mut fbest) = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    if fc > fbest {
        best = c;
        fbest = fc;
    }
    z[k] = best;
    Ok(Some((best, fbest)))
}

/// A subgradient `μ̂` of `z ↦ f(t_{i+1}, y, z)` at `z`.
///
/// Closed form for separable built-ins. Otherwise central differences with
/// step `1e-6 (1 + |z|)`, falling back to the zero vector at kinks where it
/// is a valid subgradient. Numeric results must satisfy the Fenchel equality.
pub fn subgradient_in_z(
    driver: &DriverSpec,
    path: &PathInfo<'_>,
    y: f64,
    z: &[f64],
) -> Result<Vec<f64>, DriverError> {
    require_convex(driver)?;
    if let Some((_, s, p)) = driver.separable(y) {
        let n = norm(z);
        if s == 0.0 || n == 0.0 {
            return Ok(vec![0.0; z.len()]);
        }
        let scale = s * p * n.powf(p - 2.0);
        return Ok(z.iter().map(|v| scale * v).collect());
    }

    let d = z.len();
    let h = 1e-6 * (1.0 + norm(z));
    let f0 = driver.try_eval(path, y, z)?;
    let mut grad = vec![0.0; d];
    let mut kink = false;
    let mut zz = z.to_vec();
    for k in 0..d {
        zz[k] = z[k] + h;
        let fp = driver.try_eval(path, y, &zz)?;
        zz[k] = z[k] - h;
        let fm = driver.try_eval(path, y, &zz)?;
        zz[k] = z[k];
        let right = (fp - f0) / h;
        let left = (f0 - fm) / h;
        grad[k] = 0.5 * (right + left);
        if (right - left).abs() > 1e-4 * (1.0 + grad[k].abs()) {
            kink = true;
        }
    }
    if kink {
        let zero_ok = (0..d).all(|k| {
            [h, -h].iter().all(|&step| {
                let mut zz = z.to_vec();
                zz[k] += step;
                driver
                    .try_eval(path, y, &zz)
                    .map(|f| f - f0 >= -1e-12 * (1.0 + f0.abs()))
                    .unwrap_or(false)
            })
        });
        if zero_ok {
            grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
    let g = conjugate(driver, path, y, &grad)?;
    let residual = (f0 + g.value - dot(&grad, z)).abs();
    if !(residual <= FENCHEL_TOL * (1.0 + f0.abs())) {
        return Err(DriverError::Subgradient {
            residual,
            z: z.to_vec(),
        });
    }
    Ok(grad)
}

/// `|f(z) + g(μ) - μ·z|`, the Fenchel residual of a candidate pair.
pub fn fenchel_residual(
    driver: &DriverSpec,
    path: &PathInfo<'_>,
    y: f64,
    z: &[f64],
    mu: &[f64],
) -> Result<f64, DriverError> {
    let f = driver.try_eval(path, y, z)?;
    let g = conjugate(driver, path, y, mu)?;
    Ok((f + g.value - dot(mu, z)).abs())
}
