//! Arithmetic expressions for user drivers and terminal conditions.
//!
//! ```text
//! expr    = term { ("+" | "-") term } ;
//! term    = unary { ("*" | "/") unary } ;
//! unary   = "-" unary | power ;
//! power   = atom [ "^" exponent ] ;
//! exponent = number | "(" [ "-" ] number ")" ;
//! atom    = number | variable | call | "(" expr ")" ;
//! call    = ident "(" expr { "," expr } ")" ;
//! variable = "t" | "y" | "z" digits | "w" digits [ "_" digits ] ;
//! ```
//!
//! Functions: `abs`, `sqrt`, `exp`, `sign` (one argument), `min`, `max`
//! (two), and `norm(z)` / `norm(w)` for Euclidean norms. `w{k}_{m}` is
//! coordinate `k` of the walk at the `m`-th declared observation time and is
//! only available to terminal conditions.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable `{name}` at position {pos}")]
    UnknownVariable { pos: usize, name: String },
    #[error("unknown function `{name}` at position {pos}")]
    UnknownFunction { pos: usize, name: String },
    #[error("`{name}` takes {expected} argument(s), got {found} at position {pos}")]
    Arity {
        pos: usize,
        name: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("{0} is outside the domain of {1}")]
    Domain(f64, &'static str),
    #[error("variable {0} is not bound in this context")]
    Unbound(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Var {
    T,
    Y,
    /// Zero-based coordinate of `z`.
    Z(usize),
    /// Zero-based coordinate of the current walk value.
    W(usize),
    /// Zero-based coordinate and zero-based observation index.
    WAt(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Sqrt,
    Exp,
    Sign,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "sign" => Func::Sign,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Sign => "sign",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Call(Func, Vec<Expr>),
    NormZ,
    NormW,
}

/// What an expression may refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    /// `t`, `y`, `z1..zd`, `w1..wd`.
    Driver { dim: usize },
    /// `t`, `w1..wd` (terminal walk) and `w{k}_{m}` for `m <= observations`.
    Terminal { dim: usize, observations: usize },
}

impl Scope {
    fn dim(self) -> usize {
        match self {
            Scope::Driver { dim } | Scope::Terminal { dim, .. } => dim,
        }
    }
}

/// Variable bindings for evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Bindings<'a> {
    pub t: f64,
    pub y: f64,
    pub z: &'a [f64],
    pub w: &'a [f64],
    /// Walk values at the observation times, observation-major.
    pub observed: &'a [f64],
}

impl Expr {
    pub fn parse(text: &str, scope: Scope) -> Result<Expr, ParseError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
            scope,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.syntax("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, b: &Bindings<'_>) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(v) => match *v {
                Var::T => Ok(b.t),
                Var::Y => Ok(b.y),
                Var::Z(k) => {
                    b.z.get(k)
                        .copied()
                        .ok_or_else(|| EvalError::Unbound(format!("z{}", k + 1)))
                }
                Var::W(k) => {
                    b.w.get(k)
                        .copied()
                        .ok_or_else(|| EvalError::Unbound(format!("w{}", k + 1)))
                }
                Var::WAt(k, m) => {
                    let dim = b.w.len().max(1);
                    b.observed
                        .get(m * dim + k)
                        .copied()
                        .ok_or_else(|| EvalError::Unbound(format!("w{}_{}", k + 1, m + 1)))
                }
            },
            Expr::Neg(e) => Ok(-e.eval(b)?),
            Expr::Bin(op, l, r) => {
                let l = l.eval(b)?;
                let r = r.eval(b)?;
                match op {
                    BinOp::Add => Ok(l + r),
                    BinOp::Sub => Ok(l - r),
                    BinOp::Mul => Ok(l * r),
                    BinOp::Div => {
                        if r == 0.0 {
                            Err(EvalError::DivisionByZero)
                        } else {
                            Ok(l / r)
                        }
                    }
                }
            }
            Expr::Pow(base, p) => {
                let x = base.eval(b)?;
                if x == 0.0 && *p < 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                let v = if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
                    x.powi(*p as i32)
                } else {
                    x.powf(*p)
                };
                if v.is_nan() {
                    Err(EvalError::Domain(x, "a fractional power"))
                } else {
                    Ok(v)
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(b)?;
                match f {
                    Func::Abs => Ok(a.abs()),
                    Func::Sqrt => {
                        if a < 0.0 {
                            Err(EvalError::Domain(a, "sqrt"))
                        } else {
                            Ok(a.sqrt())
                        }
                    }
                    Func::Exp => Ok(a.exp()),
                    Func::Sign => Ok(if a > 0.0 {
                        1.0
                    } else if a < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }),
                    Func::Min => Ok(a.min(args[1].eval(b)?)),
                    Func::Max => Ok(a.max(args[1].eval(b)?)),
                }
            }
            Expr::NormZ => Ok(b.z.iter().map(|v| v * v).sum::<f64>().sqrt()),
            Expr::NormW => Ok(b.w.iter().map(|v| v * v).sum::<f64>().sqrt()),
        }
    }

    /// Visits every variable occurrence (norms count as all coordinates).
    pub fn any_var(&self, pred: &mut impl FnMut(Var) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => pred(*v),
            Expr::Neg(e) | Expr::Pow(e, _) => e.any_var(pred),
            Expr::Bin(_, l, r) => l.any_var(pred) || r.any_var(pred),
            Expr::Call(_, args) => args.iter().any(|a| a.any_var(pred)),
            Expr::NormZ => pred(Var::Z(0)),
            Expr::NormW => pred(Var::W(0)),
        }
    }

    pub fn uses_y(&self) -> bool {
        self.any_var(&mut |v| v == Var::Y)
    }

    pub fn uses_walk(&self) -> bool {
        self.any_var(&mut |v| matches!(v, Var::W(_) | Var::WAt(..)))
    }

    /// Observation indices referenced through `w{k}_{m}`.
    pub fn observations_used(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.any_var(&mut |v| {
            if let Var::WAt(_, m) = v {
                if !out.contains(&m) {
                    out.push(m);
                }
            }
            false
        });
        out.sort_unstable();
        out
    }
}

fn fmt_num(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v < 0.0 {
        write!(f, "(-{})", -v)
    } else {
        write!(f, "{v}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => fmt_num(*v, f),
            Expr::Var(v) => match v {
                Var::T => f.write_str("t"),
                Var::Y => f.write_str("y"),
                Var::Z(k) => write!(f, "z{}", k + 1),
                Var::W(k) => write!(f, "w{}", k + 1),
                Var::WAt(k, m) => write!(f, "w{}_{}", k + 1, m + 1),
            },
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({l} {s} {r})")
            }
            Expr::Pow(e, p) => {
                write!(f, "({e}^")?;
                fmt_num(*p, f)?;
                f.write_str(")")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
            Expr::NormZ => f.write_str("norm(z)"),
            Expr::NormW => f.write_str("norm(w)"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    scope: Scope,
}

impl Parser<'_> {
    fn syntax(&self, msg: &str) -> ParseError {
        ParseError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if !self.eat(b'^') {
            return Ok(base);
        }
        let p = if self.eat(b'(') {
            let neg = self.eat(b'-');
            let v = self.number()?;
            self.expect(b')')?;
            if neg {
                -v
            } else {
                v
            }
        } else {
            match self.peek() {
                Some(c) if c.is_ascii_digit() || c == b'.' => self.number()?,
                _ => return Err(self.syntax("exponent must be a number literal")),
            }
        };
        Ok(Expr::Pow(Box::new(base), p))
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let s = self.src;
        let digits = |p: &mut usize| {
            let b = *p;
            while *p < s.len() && s[*p].is_ascii_digit() {
                *p += 1;
            }
            *p > b
        };
        let mut p = self.pos;
        let int = digits(&mut p);
        let mut frac = false;
        if p < s.len() && s[p] == b'.' {
            p += 1;
            frac = digits(&mut p);
        }
        if !int && !frac {
            return Err(self.syntax("expected a number"));
        }
        if p < s.len() && (s[p] == b'e' || s[p] == b'E') {
            let mut q = p + 1;
            if q < s.len() && (s[q] == b'+' || s[q] == b'-') {
                q += 1;
            }
            if digits(&mut q) {
                p = q;
            }
        }
        self.pos = p;
        let text = std::str::from_utf8(&s[start..p]).expect("ascii slice");
        text.parse::<f64>().map_err(|_| ParseError::Syntax {
            pos: start,
            msg: format!("bad number `{text}`"),
        })
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Num(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                let name = self.ident();
                if self.peek() == Some(b'(') {
                    self.call(start, &name)
                } else {
                    self.variable(start, &name).map(Expr::Var)
                }
            }
            Some(c) => Err(self.syntax(&format!("unexpected character `{}`", c as char))),
        }
    }

    fn call(&mut self, start: usize, name: &str) -> Result<Expr, ParseError> {
        self.expect(b'(')?;
        if name == "norm" {
            let arg_pos = self.pos;
            self.skip_ws();
            let arg = self.ident();
            self.expect(b')')?;
            return match arg.as_str() {
                "z" if matches!(self.scope, Scope::Driver { .. }) => Ok(Expr::NormZ),
                "w" => Ok(Expr::NormW),
                _ => Err(ParseError::Syntax {
                    pos: arg_pos,
                    msg: format!("norm takes `z` or `w`, got `{arg}`"),
                }),
            };
        }
        let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownFunction {
            pos: start,
            name: name.to_string(),
        })?;
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        self.expect(b')')?;
        if args.len() != func.arity() {
            return Err(ParseError::Arity {
                pos: start,
                name: name.to_string(),
                expected: func.arity(),
                found: args.len(),
            });
        }
        Ok(Expr::Call(func, args))
    }

    fn variable(&self, pos: usize, name: &str) -> Result<Var, ParseError> {
        let unknown = || ParseError::UnknownVariable {
            pos,
            name: name.to_string(),
        };
        let dim = self.scope.dim();
        let index = |s: &str, max: usize| -> Option<usize> {
            if s.is_empty() || s.starts_with('0') || !s.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let k: usize = s.parse().ok()?;
            (1..=max).contains(&k).then(|| k - 1)
        };
        match name {
            "t" => return Ok(Var::T),
            "y" if matches!(self.scope, Scope::Driver { .. }) => return Ok(Var::Y),
            _ => {}
        }
        if let Some(rest) = name.strip_prefix('z') {
            if matches!(self.scope, Scope::Driver { .. }) {
                return index(rest, dim).map(Var::Z).ok_or_else(unknown);
            }
            return Err(unknown());
        }
        if let Some(rest) = name.strip_prefix('w') {
            return match rest.split_once('_') {
                None => index(rest, dim).map(Var::W).ok_or_else(unknown),
                Some((k, m)) => match self.scope {
                    Scope::Terminal { observations, .. } => match (index(k, dim), index(m, observations)) {
                        (Some(k), Some(m)) => Ok(Var::WAt(k, m)),
                        _ => Err(unknown()),
                    },
                    Scope::Driver { .. } => Err(unknown()),
                },
            };
        }
        Err(unknown())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drv(s: &str) -> Expr {
        Expr::parse(s, Scope::Driver { dim: 2 }).unwrap()
    }

    fn at(e: &Expr, y: f64, z: &[f64]) -> f64 {
        e.eval(&Bindings {
            y,
            z,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn precedence() {
        assert_eq!(at(&drv("1 + 2 * 3"), 0.0, &[]), 7.0);
        assert_eq!(at(&drv("-2^2"), 0.0, &[]), -4.0);
        assert_eq!(at(&drv("(1 - 2) - 3"), 0.0, &[]), -4.0);
        assert_eq!(at(&drv("1 - 2 - 3"), 0.0, &[]), -4.0);
        assert_eq!(at(&drv("8 / 4 / 2"), 0.0, &[]), 1.0);
        assert_eq!(at(&drv("4^(-0.5)"), 0.0, &[]), 0.5);
        assert_eq!(at(&drv("2.5e1"), 0.0, &[]), 25.0);
    }

    #[test]
    fn catalog_style_drivers() {
        let e = drv("1*y + 5*norm(z)^1.5");
        assert!((at(&e, 2.0, &[4.0, 0.0]) - 42.0).abs() < 1e-12);
        assert_eq!(at(&drv("norm(z)^2"), 0.0, &[3.0, 4.0]), 25.0);
        assert_eq!(at(&drv("y"), 3.0, &[]), 3.0);
        assert_eq!(
            at(&drv("max(z1, z2) + min(abs(z1), sign(y))"), -1.0, &[-2.0, 1.0]),
            0.0
        );
    }

    #[test]
    fn errors() {
        assert!(matches!(
            drv("1 / (y - y)").eval(&Bindings::default()),
            Err(EvalError::DivisionByZero)
        ));
        assert!(matches!(
            drv("sqrt(y)").eval(&Bindings {
                y: -1.0,
                ..Default::default()
            }),
            Err(EvalError::Domain(..))
        ));
        let err = Expr::parse("1 + * 2", Scope::Driver { dim: 1 }).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { pos: 4, .. }));
        assert!(Expr::parse("z3", Scope::Driver { dim: 2 }).is_err());
        assert!(Expr::parse("z0", Scope::Driver { dim: 2 }).is_err());
        assert!(Expr::parse("log(y)", Scope::Driver { dim: 1 }).is_err());
        assert!(Expr::parse("min(y)", Scope::Driver { dim: 1 }).is_err());
        assert!(Expr::parse("y^z1", Scope::Driver { dim: 1 }).is_err());
        assert!(Expr::parse("(y", Scope::Driver { dim: 1 }).is_err());
        assert!(Expr::parse(
            "y",
            Scope::Terminal {
                dim: 1,
                observations: 0
            }
        )
        .is_err());
        assert!(Expr::parse("w1_1", Scope::Driver { dim: 1 }).is_err());
    }

    #[test]
    fn terminal_observations() {
        let e = Expr::parse(
            "w1 - w1_2",
            Scope::Terminal {
                dim: 1,
                observations: 2,
            },
        )
        .unwrap();
        assert_eq!(e.observations_used(), vec![1]);
        let v = e
            .eval(&Bindings {
                w: &[3.0],
                observed: &[10.0, 1.0],
                ..Default::default()
            })
            .unwrap();
        assert_eq!(v, 2.0);
        assert!(Expr::parse(
            "w1_3",
            Scope::Terminal {
                dim: 1,
                observations: 2
            }
        )
        .is_err());
    }

    #[test]
    fn display_round_trip() {
        for s in [
            "1*y + 5*norm(z)^1.5",
            "-y - -3",
            "abs(z1)^(-1.5) / max(z2, 0.001)",
            "sign(w1) * min(sqrt(abs(w2)), 1)",
            "exp(-t) * 1e-7 + 123456789.125",
        ] {
            let e = drv(s);
            let printed = e.to_string();
            let again = drv(&printed);
            assert_eq!(e, again, "{s} -> {printed}");
            assert_eq!(printed, again.to_string());
        }
    }
}
