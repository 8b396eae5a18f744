//! Backward induction for BSΔEs on a lattice.
//!
//! At a parent node with children `Y_b` (branch order):
//!
//! * `Z^k = E[Y ΔW^k] / Δ<W>`
//! * `Y` solves `Y - f(t_{i+1}, path_i, Y, Z) Δ<W> = E[Y_b]`
//! * `ΔM_b = Y_b - E[Y_b] - Z·ΔW_b`
//!
//! so that `Y_b = Y - f Δ<W> + Z·ΔW_b + ΔM_b` on every branch.

pub mod implicit;
pub mod terminal;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::driver::{DriverSpec, PathInfo};
use crate::field::{AdaptedField, Timing};
use crate::lattice::{Lattice, LatticeError, LatticeMode, TimeGrid};
pub use implicit::{implicit_step, StepError, StepOutcome};
pub use terminal::{TerminalKind, TerminalSpec};

/// Levels with at least this many nodes are processed in parallel.
pub const PAR_MIN_NODES: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("step-size condition L_y·Δ<W> < 1 fails: L_y = {l_y}, Δ<W> = {dqv}")]
    StepSize { l_y: f64, dqv: f64 },
    #[error("at level {level}, node {node}: {source}")]
    Step {
        level: usize,
        node: usize,
        source: StepError,
    },
    #[error(
        "a-priori bound |Y_t| <= (C+1)exp(K(T-t)) violated at level {level}, node {node}: |Y| = {value}, bound = {bound}"
    )]
    AprioriBound {
        level: usize,
        node: usize,
        value: f64,
        bound: f64,
    },
    #[error("terminal value {value} at leaf {leaf} exceeds the declared bound C = {bound}")]
    TerminalBound { leaf: usize, value: f64, bound: f64 },
    #[error("terminal condition: {0}")]
    Terminal(String),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("{0}")]
    Contract(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Recombining,
    FullTree,
    /// Full tree iff the driver or terminal is path-dependent.
    #[default]
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Relative residual tolerance of the implicit step.
    pub root_tol: f64,
    pub max_root_iters: usize,
    /// Check `|Y_t| <= (C+1)exp(K(T-t))` during the sweep (never for quadratic drivers).
    pub bound_check: bool,
    pub engine: Engine,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            root_tol: 1e-12,
            max_root_iters: 200,
            bound_check: true,
            engine: Engine::Auto,
        }
    }
}

impl SolveConfig {
    pub fn check(&self) -> Result<(), SolveError> {
        if !(self.root_tol > 0.0 && self.root_tol.is_finite()) {
            return Err(SolveError::Config(format!(
                "root_tol must be positive, got {}",
                self.root_tol
            )));
        }
        if self.max_root_iters == 0 {
            return Err(SolveError::Config("max_root_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn without_bound_check(mut self) -> Self {
        self.bound_check = false;
        self
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub engine: LatticeMode,
    /// Largest root-finding iteration count per level `0..N`.
    pub root_iterations: Vec<u32>,
    pub max_abs_dm: f64,
    /// `1 - K max Δ<W>`; positive means the existence step-size condition holds.
    pub solvability_margin: f64,
    /// `L_y max Δ<W>`, the quantity the solver actually requires below 1.
    pub l_y_dqv: f64,
    /// Whether the a-priori bound was enforced during the sweep.
    pub bound_check_active: bool,
    /// `min (bound - |Y|)` over checked nodes.
    pub min_bound_margin: Option<f64>,
}

/// Solution triple on a lattice.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub lattice: Lattice,
    /// Levels `0..=N`, scalar.
    pub y: AdaptedField,
    /// Levels `0..N`, `d` components, stored at the parent of each step.
    pub z: AdaptedField,
    /// Levels `0..N`, one increment per branch, stored at the parent.
    pub dm: AdaptedField,
    pub diagnostics: SolveDiagnostics,
}

/// Walk data of one node, owned so it can back a [`PathInfo`].
#[derive(Debug, Clone)]
pub struct NodeContext {
    pub level: usize,
    pub walk: Vec<f64>,
    pub history: Option<Vec<f64>>,
}

impl NodeContext {
    pub fn new(lattice: &Lattice, level: usize, node: usize, history: bool) -> Result<Self, LatticeError> {
        let mut walk = vec![0.0; lattice.dim()];
        lattice.walk_into(level, node, &mut walk);
        let history = if history && lattice.mode() == LatticeMode::FullTree {
            Some(lattice.node_path(level, node)?)
        } else {
            None
        };
        Ok(Self { level, walk, history })
    }

    /// Path info for the step `level -> level + 1`.
    pub fn info(&self, grid: &TimeGrid) -> PathInfo<'_> {
        PathInfo {
            level: self.level,
            time: grid.t(self.level + 1),
            walk: &self.walk,
            history: self.history.as_deref(),
            grid: *grid,
        }
    }
}

impl SolveResult {
    pub fn y0(&self) -> f64 {
        self.y.scalar(0, 0)
    }

    /// Largest `|Z|` (Euclidean) over all nodes.
    pub fn max_abs_z(&self) -> f64 {
        self.z.max_norm()
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.max_abs()
    }

    /// Largest `|Y_b - (Y - f Δ<W> + Z·ΔW_b + ΔM_b)|` over nodes and branches.
    pub fn reconstruction_residual(&self, driver: &DriverSpec) -> Result<f64, SolveError> {
        let lat = &self.lattice;
        let dqv = lat.dqv();
        let hist = driver.is_path_dependent();
        let mut worst: f64 = 0.0;
        for i in 0..lat.steps() {
            for node in 0..lat.level_size(i) {
                let ctx = NodeContext::new(lat, i, node, hist)?;
                let y = self.y.scalar(i, node);
                let z = self.z.get(i, node);
                let f = driver
                    .try_eval(&ctx.info(lat.grid()), y, z)
                    .map_err(|e| SolveError::Step {
                        level: i,
                        node,
                        source: e.into(),
                    })?;
                for b in 0..lat.branch_count() {
                    let zdw: f64 = (0..lat.dim()).map(|k| z[k] * lat.increment(b, k)).sum();
                    let rebuilt = y - f * dqv + zdw + self.dm.get(i, node)[b];
                    let child = self.y.scalar(i + 1, lat.child(i, node, b));
                    worst = worst.max((child - rebuilt).abs());
                }
            }
        }
        Ok(worst)
    }
}

/// `(C+1) exp(K(T - t))`.
pub fn apriori_bound(c: f64, k: f64, t: f64, horizon: f64) -> f64 {
    (c + 1.0) * (k * (horizon - t)).exp()
}

/// `1 - K max Δ<W>`.
pub fn solvability_margin(driver: &DriverSpec, lattice: &Lattice) -> f64 {
    1.0 - driver.constants().k * lattice.dqv()
}

/// Solution of the BSΔE with driver `K(1 + |y| + |z|^q)` and terminal `C`:
/// `Ŷ_N = C`, `Ŷ_i = (Ŷ_{i+1} + K Δ<W>) / (1 - K Δ<W>)`, indexed by level.
pub fn deterministic_solution(c: f64, k: f64, lattice: &Lattice) -> Result<Vec<f64>, SolveError> {
    let dqv = lattice.dqv();
    if !(k * dqv < 1.0) {
        return Err(SolveError::StepSize { l_y: k, dqv });
    }
    let n = lattice.steps();
    let mut out = vec![0.0; n + 1];
    out[n] = c;
    for i in (0..n).rev() {
        out[i] = (out[i + 1] + k * dqv) / (1.0 - k * dqv);
    }
    Ok(out)
}

/// Whether `(C+1)exp(K(T-t))` dominates the discrete envelope at every level,
/// i.e. whether the a-priori bound can be expected to hold on this grid.
fn envelope_valid(c: f64, k: f64, lattice: &Lattice) -> bool {
    match deterministic_solution(c, k, lattice) {
        Ok(hat) => hat
            .iter()
            .enumerate()
            .all(|(i, &v)| v <= apriori_bound(c, k, lattice.grid().t(i), lattice.horizon())),
        Err(_) => false,
    }
}

/// Resolves the engine to a concrete lattice addressing.
pub fn resolve_lattice(
    lattice: &Lattice,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    engine: Engine,
) -> Result<Lattice, SolveError> {
    let path_dep = driver.is_path_dependent() || terminal.is_path_dependent(lattice.grid());
    let mode = match engine {
        Engine::Auto if path_dep => LatticeMode::FullTree,
        Engine::Auto => LatticeMode::Recombining,
        Engine::FullTree => LatticeMode::FullTree,
        Engine::Recombining if path_dep => {
            return Err(SolveError::Contract(
                "path-dependent driver or terminal needs the full-tree engine".into(),
            ))
        }
        Engine::Recombining => LatticeMode::Recombining,
    };
    if mode == lattice.mode() {
        Ok(lattice.clone())
    } else {
        Ok(lattice.with_mode(mode)?)
    }
}

/// Backward induction from `ξ` at level `N` to the root.
pub fn solve(
    lattice: &Lattice,
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    config: &SolveConfig,
) -> Result<SolveResult, SolveError> {
    config.check()?;
    let lat = resolve_lattice(lattice, driver, terminal, config.engine)?;
    let grid = *lat.grid();
    let dqv = lat.dqv();
    let consts = driver.constants();
    if !(consts.l_y * dqv < 1.0) {
        return Err(SolveError::StepSize { l_y: consts.l_y, dqv });
    }

    let n = lat.steps();
    let d = lat.dim();
    let nb = lat.branch_count();
    let c = terminal.bound();
    let bound_active = config.bound_check && !driver.is_quadratic() && envelope_valid(c, consts.k, &lat);
    let need_history = driver.is_path_dependent() && lat.mode() == LatticeMode::FullTree;

    let mut y_levels: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    let mut z_levels: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut dm_levels: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut iters_per_level = vec![0u32; n];
    let mut min_margin = f64::INFINITY;

    y_levels[n] = terminal.leaf_values(&lat)?;
    if bound_active {
        let b = apriori_bound(c, consts.k, grid.t(n), grid.horizon());
        for &v in &y_levels[n] {
            min_margin = min_margin.min(b - v.abs());
        }
    }

    for i in (0..n).rev() {
        let size = lat.level_size(i);
        let next = &y_levels[i + 1];
        let mut y = vec![0.0; size];
        let mut z = vec![0.0; size * d];
        let mut dm = vec![0.0; size * nb];
        let mut its = vec![0u32; size];

        let work = |node: usize,
                    yo: &mut f64,
                    zo: &mut [f64],
                    dmo: &mut [f64],
                    ito: &mut u32|
         -> Result<(), SolveError> {
            let ctx = NodeContext::new(&lat, i, node, need_history)?;
            let children: Vec<f64> = lat.children(i, node).map(|c| next[c]).collect();
            let mean = lat.mean_of_children(&children);
            for (k, zk) in zo.iter_mut().enumerate() {
                *zk = lat.covariation_of_children(&children, k);
            }
            let step = implicit_step(mean, zo, driver, &ctx.info(&grid), dqv, config).map_err(|source| {
                SolveError::Step {
                    level: i,
                    node,
                    source,
                }
            })?;
            *yo = step.y;
            *ito = step.iterations;
            for (b, m) in dmo.iter_mut().enumerate() {
                let zdw: f64 = (0..d).map(|k| zo[k] * lat.increment(b, k)).sum();
                *m = children[b] - mean - zdw;
            }
            Ok(())
        };

        let first_error = if size >= PAR_MIN_NODES {
            y.par_iter_mut()
                .zip(z.par_chunks_mut(d))
                .zip(dm.par_chunks_mut(nb))
                .zip(its.par_iter_mut())
                .enumerate()
                .filter_map(|(node, (((yo, zo), dmo), ito))| {
                    work(node, yo, zo, dmo, ito).err().map(|e| (node, e))
                })
                .min_by_key(|(node, _)| *node)
        } else {
            y.iter_mut()
                .zip(z.chunks_mut(d))
                .zip(dm.chunks_mut(nb))
                .zip(its.iter_mut())
                .enumerate()
                .find_map(|(node, (((yo, zo), dmo), ito))| {
                    work(node, yo, zo, dmo, ito).err().map(|e| (node, e))
                })
        };
        if let Some((_, e)) = first_error {
            return Err(e);
        }

        if bound_active {
            let b = apriori_bound(c, consts.k, grid.t(i), grid.horizon());
            for (node, &v) in y.iter().enumerate() {
                if !(v.abs() <= b * (1.0 + 1e-12)) {
                    return Err(SolveError::AprioriBound {
                        level: i,
                        node,
                        value: v,
                        bound: b,
                    });
                }
                min_margin = min_margin.min(b - v.abs());
            }
        }

        iters_per_level[i] = its.iter().copied().max().unwrap_or(0);
        y_levels[i] = y;
        z_levels[i] = z;
        dm_levels[i] = dm;
    }

    let dm_field = AdaptedField::new(Timing::RightConstant, nb, dm_levels);
    let diagnostics = SolveDiagnostics {
        engine: lat.mode(),
        root_iterations: iters_per_level,
        max_abs_dm: dm_field.max_abs(),
        solvability_margin: 1.0 - consts.k * dqv,
        l_y_dqv: consts.l_y * dqv,
        bound_check_active: bound_active,
        min_bound_margin: bound_active.then_some(min_margin),
    };
    Ok(SolveResult {
        y: AdaptedField::new(Timing::LeftConstant, 1, y_levels),
        z: AdaptedField::new(Timing::RightConstant, d, z_levels),
        dm: dm_field,
        lattice: lat,
        diagnostics,
    })
}
