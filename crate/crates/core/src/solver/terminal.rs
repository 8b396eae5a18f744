//! Terminal conditions `ξ^N`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use super::SolveError;
use crate::driver::{Bindings, Expr, Scope};
use crate::lattice::{Lattice, LatticeMode, TimeGrid};

type MarkovFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

const PAR_MIN: usize = 4096;

#[derive(Clone)]
pub enum TerminalKind {
    /// `φ(W_T)` and, through `w{k}_{m}`, walk values at observation times.
    Expression { expr: Expr, observation_times: Vec<f64> },
    /// One value per leaf, in the addressing of `mode`.
    Table { mode: LatticeMode, values: Vec<f64> },
    /// A function of `W_T`.
    Markov(Arc<MarkovFn>),
    /// A function of the whole walk path, level-major (`(N + 1) d` values).
    Path(Arc<MarkovFn>),
}

impl fmt::Debug for TerminalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TerminalKind::Expression {
                expr,
                observation_times,
            } => write!(f, "Expression({expr}, {observation_times:?})"),
            TerminalKind::Table { mode, values } => {
                write!(f, "Table({mode}, {} values)", values.len())
            }
            TerminalKind::Markov(_) => f.write_str("Markov(..)"),
            TerminalKind::Path(_) => f.write_str("Path(..)"),
        }
    }
}

/// A terminal condition with its declared sup-norm bound `C`.
#[derive(Debug, Clone)]
pub struct TerminalSpec {
    kind: TerminalKind,
    bound: f64,
    label: String,
}

fn check_bound(bound: f64) -> Result<(), SolveError> {
    if bound.is_finite() && bound >= 0.0 {
        Ok(())
    } else {
        Err(SolveError::Terminal(format!(
            "bound C must be finite and nonnegative, got {bound}"
        )))
    }
}

impl TerminalSpec {
    pub fn expression(
        text: &str,
        bound: f64,
        dim: usize,
        observation_times: Vec<f64>,
    ) -> Result<Self, SolveError> {
        check_bound(bound)?;
        for w in observation_times.windows(2) {
            if w[0] >= w[1] {
                return Err(SolveError::Terminal(
                    "observation times must be strictly increasing".into(),
                ));
            }
        }
        if observation_times.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(SolveError::Terminal(
                "observation times must be finite and nonnegative".into(),
            ));
        }
        let expr = Expr::parse(
            text,
            Scope::Terminal {
                dim,
                observations: observation_times.len(),
            },
        )
        .map_err(|e| SolveError::Terminal(e.to_string()))?;
        Ok(Self {
            label: expr.to_string(),
            kind: TerminalKind::Expression {
                expr,
                observation_times,
            },
            bound,
        })
    }

    pub fn table(mode: LatticeMode, values: Vec<f64>, bound: f64) -> Result<Self, SolveError> {
        check_bound(bound)?;
        Ok(Self {
            label: format!("table({} leaves)", values.len()),
            kind: TerminalKind::Table { mode, values },
            bound,
        })
    }

    pub fn markov(
        label: impl Into<String>,
        bound: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, SolveError> {
        check_bound(bound)?;
        Ok(Self {
            kind: TerminalKind::Markov(Arc::new(f)),
            bound,
            label: label.into(),
        })
    }

    pub fn path(
        label: impl Into<String>,
        bound: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, SolveError> {
        check_bound(bound)?;
        Ok(Self {
            kind: TerminalKind::Path(Arc::new(f)),
            bound,
            label: label.into(),
        })
    }

    pub fn constant(c: f64) -> Result<Self, SolveError> {
        Self::markov(format!("{c}"), c.abs(), move |_| c)
    }

    pub fn kind(&self) -> &TerminalKind {
        &self.kind
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Whether leaf values need more than `W_T`.
    pub fn is_path_dependent(&self, grid: &TimeGrid) -> bool {
        match &self.kind {
            TerminalKind::Expression {
                expr,
                observation_times,
            } => expr
                .observations_used()
                .iter()
                .any(|&m| grid.level_at(observation_times[m]) < grid.steps()),
            TerminalKind::Table { mode, .. } => *mode == LatticeMode::FullTree,
            TerminalKind::Markov(_) => false,
            TerminalKind::Path(_) => true,
        }
    }

    /// Leaf values on `lattice`, checked against the declared bound.
    pub fn leaf_values(&self, lattice: &Lattice) -> Result<Vec<f64>, SolveError> {
        let n = lattice.steps();
        let size = lattice.level_size(n);
        let d = lattice.dim();
        let grid = *lattice.grid();
        let full = lattice.mode() == LatticeMode::FullTree;
        if !full && self.is_path_dependent(&grid) {
            return Err(SolveError::Contract(
                "a path-dependent terminal condition needs a full-tree lattice".into(),
            ));
        }

        let eval_leaf = |leaf: usize| -> Result<f64, SolveError> {
            match &self.kind {
                TerminalKind::Table { .. } => unreachable!("tables are copied"),
                TerminalKind::Markov(f) => Ok(f(&lattice.walk(n, leaf))),
                TerminalKind::Path(f) => Ok(f(&lattice.node_path(n, leaf)?)),
                TerminalKind::Expression {
                    expr,
                    observation_times,
                } => {
                    let w = lattice.walk(n, leaf);
                    let observed: Vec<f64> = if observation_times.is_empty() {
                        Vec::new()
                    } else if full {
                        let path = lattice.node_path(n, leaf)?;
                        observation_times
                            .iter()
                            .flat_map(|&s| {
                                let l = grid.level_at(s);
                                path[l * d..(l + 1) * d].to_vec()
                            })
                            .collect()
                    } else {
                        // only terminal-time observations are referenced here
                        observation_times.iter().flat_map(|_| w.clone()).collect()
                    };
                    expr.eval(&Bindings {
                        t: grid.horizon(),
                        y: 0.0,
                        z: &[],
                        w: &w,
                        observed: &observed,
                    })
                    .map_err(|e| SolveError::Terminal(format!("leaf {leaf}: {e}")))
                }
            }
        };

        let values: Vec<f64> = match &self.kind {
            TerminalKind::Table { mode, values } => {
                if *mode != lattice.mode() || values.len() != size {
                    return Err(SolveError::Terminal(format!(
                        "table has {} {} leaves but the lattice has {size} {} leaves",
                        values.len(),
                        mode,
                        lattice.mode()
                    )));
                }
                values.clone()
            }
            _ if size >= PAR_MIN => (0..size)
                .into_par_iter()
                .map(eval_leaf)
                .collect::<Result<_, _>>()?,
            _ => (0..size).map(eval_leaf).collect::<Result<_, _>>()?,
        };

        let tol = self.bound * 1e-12;
        for (leaf, &v) in values.iter().enumerate() {
            if !(v.abs() <= self.bound + tol) {
                return Err(SolveError::TerminalBound {
                    leaf,
                    value: v,
                    bound: self.bound,
                });
            }
        }
        Ok(values)
    }
}
