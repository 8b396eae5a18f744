//! Drivers `f(t_{i+1}, path up to t_i, y, z)`.
//!
//! A [`DriverSpec`] pairs an evaluator with declared constants:
//!
//! * growth: `|f| <= K (1 + |y| + |z|^q)`
//! * y-Lipschitz: `|f(y1) - f(y2)| <= L_y |y1 - y2|`
//! * z-modulus: `|f(z1) - f(z2)| <= L_z (1 + max(|z1|, |z2|)^{q/2}) |z1 - z2|`
//! * path-Lipschitz (optional): `|f(w1) - f(w2)| <= L_w sup |w1 - w2|`
//!
//! Built-in drivers carry exact constants. Expression drivers are checked
//! against their declarations by seeded sampling (see [`validate`]).

pub mod conjugate;
pub mod expr;
pub mod validate;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{ContinuousPath, TimeGrid};
pub use conjugate::{conjugate, fenchel_residual, subgradient_in_z, ConjugateResult, FENCHEL_TOL};
pub use expr::{Bindings, EvalError, Expr, ParseError, Scope};
pub use validate::{
    parse_driver, parse_driver_in, validate_driver, ValidationBox, VALIDATION_POINTS, VALIDATION_SEED,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("driver evaluation failed at y = {y}, z = {z:?}: {source}")]
    Eval { y: f64, z: Vec<f64>, source: EvalError },
    #[error("unknown built-in driver `{0}`")]
    UnknownBuiltin(String),
    #[error("invalid driver parameter: {0}")]
    InvalidParameter(String),
    #[error("declared constant violated: {condition} at {witness} ({lhs:.6e} > {rhs:.6e})")]
    ConstantViolation {
        condition: &'static str,
        witness: String,
        lhs: f64,
        rhs: f64,
    },
    #[error("driver `{0}` is not declared convex in z; its conjugate is undefined")]
    NotConvex(String),
    #[error("numeric subgradient fails the Fenchel equality: residual {residual:.3e} at z = {z:?}")]
    Subgradient { residual: f64, z: Vec<f64> },
    #[error("conjugate maximization did not converge at mu = {0:?}")]
    Conjugate(Vec<f64>),
}

/// Path information available to a driver at step `i -> i + 1`.
#[derive(Debug, Clone, Copy)]
pub struct PathInfo<'a> {
    /// Level `i` of the parent node.
    pub level: usize,
    /// Driver time `t_{i+1}`.
    pub time: f64,
    /// Walk value `W_{t_i}` (length `d`).
    pub walk: &'a [f64],
    /// Walk values at levels `0..=i`, level-major; only on full-tree solves.
    pub history: Option<&'a [f64]>,
    pub grid: TimeGrid,
}

impl<'a> PathInfo<'a> {
    /// Path info with no walk dependence, for probing drivers off-lattice.
    pub fn detached(time: f64, walk: &'a [f64], grid: TimeGrid) -> Self {
        Self {
            level: grid.level_at(time).saturating_sub(1),
            time,
            walk,
            history: None,
            grid,
        }
    }

    /// The continuous interpolation `W^{N,c}` of the history, when known.
    pub fn interpolation(&self) -> Option<ContinuousPath> {
        let h = self.history?;
        ContinuousPath::new(self.grid, self.walk.len(), h.to_vec()).ok()
    }
}

/// Declared constants of a driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverConstants {
    /// Growth constant `K`.
    pub k: f64,
    /// Growth exponent `q` in `[1, 2]`; 2 needs `quadratic`.
    pub q: f64,
    #[serde(default)]
    pub quadratic: bool,
    pub l_y: f64,
    pub l_z: f64,
    #[serde(default)]
    pub l_w: Option<f64>,
    #[serde(default)]
    pub convex_in_z: bool,
    #[serde(default)]
    pub path_dependent: bool,
}

impl DriverConstants {
    pub fn check(&self) -> Result<(), DriverError> {
        let bad = |m: String| Err(DriverError::InvalidParameter(m));
        for (name, v) in [("K", self.k), ("L_y", self.l_y), ("L_z", self.l_z)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if let Some(l) = self.l_w {
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("L_w must be finite and nonnegative, got {l}"));
            }
        }
        if !(1.0..=2.0).contains(&self.q) {
            return bad(format!("growth exponent q must lie in [1, 2], got {}", self.q));
        }
        if self.q == 2.0 && !self.quadratic {
            return bad("q = 2 requires the quadratic flag".into());
        }
        Ok(())
    }
}

type CustomFn = dyn Fn(&PathInfo<'_>, f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum DriverKind {
    Zero,
    Constant(f64),
    /// `|z|^q`
    PowerZ(f64),
    /// `|z|^2`
    QuadraticZ,
    /// `k1 y + k2 |z|^p`
    LinearYPowerZ {
        k1: f64,
        k2: f64,
        p: f64,
    },
    /// `k (1 + |y| + |z|^q)`
    Bound {
        k: f64,
        q: f64,
    },
    Expression(Expr),
    /// `inner(t, y, R z / |z|)` for `|z| > R`.
    Truncated {
        inner: Box<DriverSpec>,
        radius: f64,
    },
    /// `inner + offset`
    Shifted {
        inner: Box<DriverSpec>,
        offset: f64,
    },
    Custom(Arc<CustomFn>),
}

impl fmt::Debug for DriverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriverKind::Zero => f.write_str("Zero"),
            DriverKind::Constant(c) => write!(f, "Constant({c})"),
            DriverKind::PowerZ(q) => write!(f, "PowerZ({q})"),
            DriverKind::QuadraticZ => f.write_str("QuadraticZ"),
            DriverKind::LinearYPowerZ { k1, k2, p } => {
                write!(f, "LinearYPowerZ {{ k1: {k1}, k2: {k2}, p: {p} }}")
            }
            DriverKind::Bound { k, q } => write!(f, "Bound {{ k: {k}, q: {q} }}"),
            DriverKind::Expression(e) => write!(f, "Expression({e})"),
            DriverKind::Truncated { inner, radius } => {
                write!(f, "Truncated {{ inner: {inner:?}, radius: {radius} }}")
            }
            DriverKind::Shifted { inner, offset } => {
                write!(f, "Shifted {{ inner: {inner:?}, offset: {offset} }}")
            }
            DriverKind::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// An evaluable driver with declared constants.
#[derive(Debug, Clone)]
pub struct DriverSpec {
    kind: DriverKind,
    constants: DriverConstants,
    label: String,
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn pow_norm(z: &[f64], p: f64) -> f64 {
    let n = norm(z);
    if p == 2.0 {
        n * n
    } else {
        n.powf(p)
    }
}

/// Named built-in drivers, as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    Zero {},
    Constant { c: f64 },
    PowerZ { q: f64 },
    QuadraticZ {},
    LinearYPowerZ { k1: f64, k2: f64, p: f64 },
    BoundDriver { k: f64, q: f64 },
}

impl Builtin {
    pub fn build(&self) -> Result<DriverSpec, DriverError> {
        match *self {
            Builtin::Zero {} => Ok(DriverSpec::zero()),
            Builtin::Constant { c } => DriverSpec::constant(c),
            Builtin::PowerZ { q } => DriverSpec::power_z(q),
            Builtin::QuadraticZ {} => Ok(DriverSpec::quadratic_z()),
            Builtin::LinearYPowerZ { k1, k2, p } => DriverSpec::linear_y_power_z(k1, k2, p),
            Builtin::BoundDriver { k, q } => DriverSpec::bound_driver(k, q),
        }
    }
}

/// Looks up a built-in by name with positional parameters.
pub fn builtin(name: &str, params: &[f64]) -> Result<DriverSpec, DriverError> {
    let want = |n: usize| -> Result<(), DriverError> {
        if params.len() == n {
            Ok(())
        } else {
            Err(DriverError::InvalidParameter(format!(
                "`{name}` takes {n} parameter(s), got {}",
                params.len()
            )))
        }
    };
    match name {
        "zero" => want(0).map(|_| DriverSpec::zero()),
        "constant" => want(1).and_then(|_| DriverSpec::constant(params[0])),
        "power_z" => want(1).and_then(|_| DriverSpec::power_z(params[0])),
        "quadratic_z" => want(0).map(|_| DriverSpec::quadratic_z()),
        "linear_y_power_z" => {
            want(3).and_then(|_| DriverSpec::linear_y_power_z(params[0], params[1], params[2]))
        }
        "bound_driver" => want(2).and_then(|_| DriverSpec::bound_driver(params[0], params[1])),
        _ => Err(DriverError::UnknownBuiltin(name.to_string())),
    }
}

fn check_exponent(q: f64, what: &str) -> Result<(), DriverError> {
    if (1.0..=2.0).contains(&q) {
        Ok(())
    } else {
        Err(DriverError::InvalidParameter(format!(
            "{what} exponent must lie in [1, 2], got {q}"
        )))
    }
}

fn check_nonneg(v: f64, what: &str) -> Result<(), DriverError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(DriverError::InvalidParameter(format!(
            "{what} must be finite and nonnegative, got {v}"
        )))
    }
}

impl DriverSpec {
    /// Wraps an arbitrary evaluator. The constants are trusted, not sampled.
    pub fn custom(
        label: impl Into<String>,
        constants: DriverConstants,
        f: impl Fn(&PathInfo<'_>, f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, DriverError> {
        constants.check()?;
        Ok(Self {
            kind: DriverKind::Custom(Arc::new(f)),
            constants,
            label: label.into(),
        })
    }

    pub(crate) fn from_expression(expr: Expr, constants: DriverConstants) -> Self {
        Self {
            label: expr.to_string(),
            kind: DriverKind::Expression(expr),
            constants,
        }
    }

    pub fn zero() -> Self {
        Self {
            kind: DriverKind::Zero,
            constants: DriverConstants {
                k: 0.0,
                q: 1.0,
                quadratic: false,
                l_y: 0.0,
                l_z: 0.0,
                l_w: Some(0.0),
                convex_in_z: true,
                path_dependent: false,
            },
            label: "zero".into(),
        }
    }

    pub fn constant(c: f64) -> Result<Self, DriverError> {
        if !c.is_finite() {
            return Err(DriverError::InvalidParameter(format!(
                "constant must be finite, got {c}"
            )));
        }
        let mut s = Self::zero();
        s.kind = DriverKind::Constant(c);
        s.constants.k = c.abs();
        s.label = format!("constant({c})");
        Ok(s)
    }

    pub fn power_z(q: f64) -> Result<Self, DriverError> {
        check_exponent(q, "power_z")?;
        if q == 2.0 {
            return Ok(Self::quadratic_z());
        }
        Ok(Self {
            kind: DriverKind::PowerZ(q),
            constants: DriverConstants {
                k: 1.0,
                q,
                quadratic: false,
                l_y: 0.0,
                l_z: q,
                l_w: Some(0.0),
                convex_in_z: true,
                path_dependent: false,
            },
            label: format!("power_z({q})"),
        })
    }

    pub fn quadratic_z() -> Self {
        Self {
            kind: DriverKind::QuadraticZ,
            constants: DriverConstants {
                k: 1.0,
                q: 2.0,
                quadratic: true,
                l_y: 0.0,
                l_z: 2.0,
                l_w: Some(0.0),
                convex_in_z: true,
                path_dependent: false,
            },
            label: "quadratic_z".into(),
        }
    }

    pub fn linear_y_power_z(k1: f64, k2: f64, p: f64) -> Result<Self, DriverError> {
        check_nonneg(k1.abs(), "K1")?;
        check_nonneg(k2, "K2")?;
        check_exponent(p, "linear_y_power_z")?;
        Ok(Self {
            kind: DriverKind::LinearYPowerZ { k1, k2, p },
            constants: DriverConstants {
                k: k1.abs().max(k2),
                q: p,
                quadratic: p == 2.0,
                l_y: k1.abs(),
                l_z: k2 * p,
                l_w: Some(0.0),
                convex_in_z: true,
                path_dependent: false,
            },
            label: format!("linear_y_power_z({k1}, {k2}, {p})"),
        })
    }

    pub fn bound_driver(k: f64, q: f64) -> Result<Self, DriverError> {
        check_nonneg(k, "K")?;
        check_exponent(q, "bound_driver")?;
        Ok(Self {
            kind: DriverKind::Bound { k, q },
            constants: DriverConstants {
                k,
                q,
                quadratic: q == 2.0,
                l_y: k,
                l_z: k * q,
                l_w: Some(0.0),
                convex_in_z: true,
                path_dependent: false,
            },
            label: format!("bound_driver({k}, {q})"),
        })
    }

    /// Radially frozen copy: `f(t, y, R z / |z|)` for `|z| > R`.
    ///
    /// The result has linear growth in `z` and z-modulus `L_z (1 + R^{q/2})`;
    /// it is no longer convex in general.
    pub fn truncate(&self, radius: f64) -> Result<Self, DriverError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(DriverError::InvalidParameter(format!(
                "truncation radius must be positive, got {radius}"
            )));
        }
        // truncating twice at the same radius changes nothing
        if let DriverKind::Truncated { radius: r, .. } = &self.kind {
            if *r == radius {
                return Ok(self.clone());
            }
        }
        let c = &self.constants;
        Ok(Self {
            constants: DriverConstants {
                k: c.k * (1.0 + radius.powf(c.q)),
                q: 1.0,
                quadratic: false,
                l_y: c.l_y,
                l_z: c.l_z * (1.0 + radius.powf(c.q / 2.0)),
                l_w: c.l_w,
                convex_in_z: false,
                path_dependent: c.path_dependent,
            },
            label: format!("truncate({}, {radius})", self.label),
            kind: DriverKind::Truncated {
                inner: Box::new(self.clone()),
                radius,
            },
        })
    }

    /// `f + offset`.
    pub fn shifted(&self, offset: f64) -> Result<Self, DriverError> {
        if !offset.is_finite() {
            return Err(DriverError::InvalidParameter(format!(
                "shift must be finite, got {offset}"
            )));
        }
        let mut constants = self.constants.clone();
        constants.k += offset.abs();
        Ok(Self {
            label: format!("({}) + {offset}", self.label),
            kind: DriverKind::Shifted {
                inner: Box::new(self.clone()),
                offset,
            },
            constants,
        })
    }

    pub fn kind(&self) -> &DriverKind {
        &self.kind
    }

    pub fn constants(&self) -> &DriverConstants {
        &self.constants
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn is_quadratic(&self) -> bool {
        self.constants.quadratic
    }

    pub fn is_path_dependent(&self) -> bool {
        self.constants.path_dependent
    }

    pub fn try_eval(&self, p: &PathInfo<'_>, y: f64, z: &[f64]) -> Result<f64, DriverError> {
        match &self.kind {
            DriverKind::Zero => Ok(0.0),
            DriverKind::Constant(c) => Ok(*c),
            DriverKind::PowerZ(q) => Ok(pow_norm(z, *q)),
            DriverKind::QuadraticZ => Ok(pow_norm(z, 2.0)),
            DriverKind::LinearYPowerZ { k1, k2, p: e } => Ok(k1 * y + k2 * pow_norm(z, *e)),
            DriverKind::Bound { k, q } => Ok(k * (1.0 + y.abs() + pow_norm(z, *q))),
            DriverKind::Expression(e) => e
                .eval(&Bindings {
                    t: p.time,
                    y,
                    z,
                    w: p.walk,
                    observed: &[],
                })
                .map_err(|source| DriverError::Eval {
                    y,
                    z: z.to_vec(),
                    source,
                }),
            DriverKind::Truncated { inner, radius } => {
                let n = norm(z);
                if n <= *radius {
                    inner.try_eval(p, y, z)
                } else {
                    let s = radius / n;
                    let zr: Vec<f64> = z.iter().map(|v| v * s).collect();
                    inner.try_eval(p, y, &zr)
                }
            }
            DriverKind::Shifted { inner, offset } => Ok(inner.try_eval(p, y, z)? + offset),
            DriverKind::Custom(f) => Ok(f(p, y, z)),
        }
    }

    /// Evaluates a driver known not to fail (all built-ins).
    ///
    /// Panics on evaluation errors; use [`try_eval`](Self::try_eval) for expressions.
    pub fn eval(&self, p: &PathInfo<'_>, y: f64, z: &[f64]) -> f64 {
        self.try_eval(p, y, z).expect("driver evaluation failed")
    }

    /// `∂f/∂y` where it is available in closed form.
    pub fn dy(&self, y: f64) -> Option<f64> {
        match &self.kind {
            DriverKind::Zero | DriverKind::Constant(_) | DriverKind::PowerZ(_) | DriverKind::QuadraticZ => {
                Some(0.0)
            }
            DriverKind::LinearYPowerZ { k1, .. } => Some(*k1),
            DriverKind::Bound { k, .. } => Some(k * y.signum()),
            DriverKind::Shifted { inner, .. } | DriverKind::Truncated { inner, .. } => inner.dy(y),
            DriverKind::Expression(e) if !e.uses_y() => Some(0.0),
            _ => None,
        }
    }

    /// For drivers of the form `a + s |z|^p` (with `a` depending on `y` only),
    /// returns `(a, s, p)` at the given `y`.
    pub(crate) fn separable(&self, y: f64) -> Option<(f64, f64, f64)> {
        match &self.kind {
            DriverKind::Zero => Some((0.0, 0.0, 1.0)),
            DriverKind::Constant(c) => Some((*c, 0.0, 1.0)),
            DriverKind::PowerZ(q) => Some((0.0, 1.0, *q)),
            DriverKind::QuadraticZ => Some((0.0, 1.0, 2.0)),
            DriverKind::LinearYPowerZ { k1, k2, p } => Some((k1 * y, *k2, *p)),
            DriverKind::Bound { k, q } => Some((k * (1.0 + y.abs()), *k, *q)),
            DriverKind::Shifted { inner, offset } => inner.separable(y).map(|(a, s, p)| (a + offset, s, p)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn at(d: &DriverSpec, y: f64, z: &[f64]) -> f64 {
        let grid = TimeGrid::new(4, 1.0).unwrap();
        d.eval(&PathInfo::detached(0.5, &[0.0], grid), y, z)
    }

    #[test]
    fn builtin_catalog() {
        let zero = builtin("zero", &[]).unwrap();
        assert_eq!(zero.constants().k, 0.0);
        assert_eq!(at(&zero, 3.0, &[2.0]), 0.0);

        let b = builtin("bound_driver", &[1.0, 1.5]).unwrap();
        assert_relative_eq!(at(&b, -2.0, &[4.0]), 1.0 + 2.0 + 8.0);
        assert_eq!(b.constants().l_y, 1.0);
        assert!(b.constants().convex_in_z);

        let p = builtin("power_z", &[1.5]).unwrap();
        assert_relative_eq!(at(&p, 9.0, &[-4.0]), 8.0);
        assert!(!p.is_quadratic());

        let l = builtin("linear_y_power_z", &[1.0, 5.0, 1.5]).unwrap();
        assert_relative_eq!(at(&l, 2.0, &[4.0]), 42.0);
        assert_eq!(l.constants().k, 5.0);

        assert!(builtin("quadratic_z", &[]).unwrap().is_quadratic());
        assert_eq!(at(&builtin("constant", &[2.5]).unwrap(), 0.0, &[1.0]), 2.5);
        assert!(matches!(
            builtin("cubic", &[]),
            Err(DriverError::UnknownBuiltin(_))
        ));
        assert!(builtin("power_z", &[2.5]).is_err());
        assert!(builtin("power_z", &[]).is_err());
    }

    #[test]
    fn builtin_enum_deserializes() {
        let b: Builtin = serde_json::from_str(r#"{"name":"bound_driver","k":1,"q":1.5}"#).unwrap();
        assert_eq!(b, Builtin::BoundDriver { k: 1.0, q: 1.5 });
        assert!(serde_json::from_str::<Builtin>(r#"{"name":"nope"}"#).is_err());
        assert!(serde_json::from_str::<Builtin>(r#"{"name":"zero","x":1}"#).is_err());
    }

    #[test]
    fn truncation_examples() {
        let t = DriverSpec::quadratic_z().truncate(1.0).unwrap();
        assert_eq!(at(&t, 0.0, &[3.0]), 1.0);
        assert!(!t.is_quadratic());
        let p = DriverSpec::power_z(1.5).unwrap();
        let tp = p.truncate(4.0).unwrap();
        assert_relative_eq!(at(&tp, 0.0, &[-8.0]), 8.0);
        for z in [-4.0, -1.0, 0.0, 0.3, 3.9] {
            assert_eq!(at(&tp, 0.0, &[z]), at(&p, 0.0, &[z]));
        }
        assert_relative_eq!(tp.constants().l_z, 1.5 * (1.0 + 4f64.powf(0.75)));
    }

    #[test]
    fn truncation_is_idempotent() {
        let t = DriverSpec::power_z(1.5).unwrap().truncate(2.0).unwrap();
        let tt = t.truncate(2.0).unwrap();
        for z in [-9.0, -2.5, 0.0, 1.0, 7.0] {
            assert_eq!(at(&t, 0.0, &[z]), at(&tt, 0.0, &[z]));
        }
        assert_eq!(t.constants(), tt.constants());
    }

    #[test]
    fn shift_and_separable_form() {
        let b = DriverSpec::bound_driver(2.0, 1.5).unwrap().shifted(0.5).unwrap();
        assert_eq!(b.separable(-1.0), Some((4.5, 2.0, 1.5)));
        assert_relative_eq!(at(&b, -1.0, &[1.0]), 6.5);
        assert_eq!(b.dy(-1.0), Some(-2.0));
    }

    #[test]
    fn custom_driver_sees_history() {
        let c = DriverConstants {
            k: 1.0,
            q: 1.0,
            quadratic: false,
            l_y: 0.0,
            l_z: 0.0,
            l_w: Some(1.0),
            convex_in_z: true,
            path_dependent: true,
        };
        let d = DriverSpec::custom("sup", c, |p, _, _| {
            p.interpolation()
                .and_then(|w| w.running_sup_norm(p.time))
                .unwrap_or(0.0)
        })
        .unwrap();
        let grid = TimeGrid::new(2, 1.0).unwrap();
        let hist = [0.0, 0.5f64.sqrt()];
        let info = PathInfo {
            level: 1,
            time: 1.0,
            walk: &hist[1..],
            history: Some(&hist),
            grid,
        };
        assert_relative_eq!(d.eval(&info, 0.0, &[0.0]), 0.5f64.sqrt());
    }
}
