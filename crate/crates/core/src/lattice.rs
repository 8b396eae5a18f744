//! Bernoulli random-walk lattices.
//!
//! A lattice is the finite filtration generated by a `d`-dimensional
//! symmetric Bernoulli walk on the uniform grid `t_i = i T / N`. Every node
//! at level `i < N` has `2^d` equally likely children; branch `b` moves
//! coordinate `j` up by `sqrt(T/N)` when bit `j` of `b` is set and down
//! otherwise.
//!
//! Two addressing schemes are supported:
//!
//! * **recombining**: a node at level `i` is the vector `k` of up-move counts
//!   (`0 <= k_j <= i`), stored in mixed radix `i + 1`. Level `i` has
//!   `(i + 1)^d` nodes. Only valid for Markovian problems.
//! * **full tree**: a node at level `i` is its full sign path, stored as the
//!   concatenation of the `d`-bit branch labels. Level `i` has `2^{d i}`
//!   nodes, so the total number of sign bits `d N` is capped.
//!
//! All expectations are exact equal-weight sums over the children.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on `d * N` for full-tree lattices.
pub const DEFAULT_FULL_TREE_CAP: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("invalid lattice parameter: {0}")]
    InvalidParameter(String),
    #[error("full-tree lattice needs {bits} sign bits (dim {dim} x {steps} steps), above the cap of {cap}")]
    TooLarge {
        bits: usize,
        dim: usize,
        steps: usize,
        cap: usize,
    },
    #[error("recombining lattice with dim {dim} and {steps} steps has too many nodes to address")]
    Overflow { dim: usize, steps: usize },
    #[error("level-{level} field has {len} entries but node {node} needs child index {child}")]
    MissingChild {
        level: usize,
        node: usize,
        child: usize,
        len: usize,
    },
    #[error("node {node} does not exist at level {level} ({size} nodes)")]
    NoSuchNode { level: usize, node: usize, size: usize },
    #[error("level {level} is outside the grid 0..={steps}")]
    NoSuchLevel { level: usize, steps: usize },
    #[error("growth exponent q = {0} is outside [1, 2)")]
    ExponentOutOfRange(f64),
    #[error("node paths are only defined on full-tree lattices")]
    NotFullTree,
    #[error("branch label {branch} is not below {branches}")]
    NoSuchBranch { branch: usize, branches: usize },
    #[error("path has {len} values, which is not a whole number of {dim}-vectors")]
    RaggedPath { len: usize, dim: usize },
}

/// Uniform time grid `t_i = i T / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    steps: usize,
    horizon: f64,
}

impl TimeGrid {
    pub fn new(steps: usize, horizon: f64) -> Result<Self, LatticeError> {
        if steps == 0 {
            return Err(LatticeError::InvalidParameter(
                "number of steps must be at least 1".into(),
            ));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(LatticeError::InvalidParameter(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(Self { steps, horizon })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Grid time `t_i`; `t_N` is exactly the horizon.
    pub fn t(&self, i: usize) -> f64 {
        if i >= self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    /// Quadratic-variation step `Δ<W>` (identical at every level and coordinate).
    pub fn dqv(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Mesh size `sup_i |t_i - t_{i-1}|`.
    pub fn mesh(&self) -> f64 {
        self.dqv()
    }

    /// Index of the last grid time `t_i <= s` (the walk is constant on `[t_i, t_{i+1})`).
    pub fn level_at(&self, s: f64) -> usize {
        if s >= self.horizon {
            return self.steps;
        }
        if s <= 0.0 {
            return 0;
        }
        let raw = s * self.steps as f64 / self.horizon;
        let mut i = raw.floor() as usize;
        // guard against s landing a rounding error below a grid point
        if self.t(i + 1) <= s {
            i += 1;
        }
        i.min(self.steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeMode {
    Recombining,
    FullTree,
}

impl std::fmt::Display for LatticeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LatticeMode::Recombining => f.write_str("recombining"),
            LatticeMode::FullTree => f.write_str("full_tree"),
        }
    }
}

/// A `d`-dimensional Bernoulli walk lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    grid: TimeGrid,
    dim: usize,
    mode: LatticeMode,
    step: f64,
    cap: usize,
}

/// Builds a lattice with the default full-tree cap.
pub fn build_lattice(
    steps: usize,
    horizon: f64,
    dim: usize,
    mode: LatticeMode,
) -> Result<Lattice, LatticeError> {
    Lattice::with_cap(steps, horizon, dim, mode, DEFAULT_FULL_TREE_CAP)
}

impl Lattice {
    pub fn new(steps: usize, horizon: f64, dim: usize, mode: LatticeMode) -> Result<Self, LatticeError> {
        Self::with_cap(steps, horizon, dim, mode, DEFAULT_FULL_TREE_CAP)
    }

    pub fn with_cap(
        steps: usize,
        horizon: f64,
        dim: usize,
        mode: LatticeMode,
        cap: usize,
    ) -> Result<Self, LatticeError> {
        let grid = TimeGrid::new(steps, horizon)?;
        if dim == 0 {
            return Err(LatticeError::InvalidParameter(
                "walk dimension must be at least 1".into(),
            ));
        }
        if dim >= usize::BITS as usize / 2 {
            return Err(LatticeError::InvalidParameter(format!(
                "walk dimension {dim} is too large"
            )));
        }
        match mode {
            LatticeMode::FullTree => {
                let bits = dim.saturating_mul(steps);
                if bits > cap || bits >= usize::BITS as usize {
                    return Err(LatticeError::TooLarge {
                        bits,
                        dim,
                        steps,
                        cap,
                    });
                }
            }
            LatticeMode::Recombining => {
                let ok = (steps + 1)
                    .checked_pow(dim as u32)
                    .map(|n| n.checked_mul(1usize << dim).is_some())
                    .unwrap_or(false);
                if !ok {
                    return Err(LatticeError::Overflow { dim, steps });
                }
            }
        }
        Ok(Self {
            grid,
            dim,
            mode,
            step: grid.dqv().sqrt(),
            cap,
        })
    }

    /// Same grid and dimension, different addressing.
    pub fn with_mode(&self, mode: LatticeMode) -> Result<Self, LatticeError> {
        Self::with_cap(self.grid.steps, self.grid.horizon, self.dim, mode, self.cap)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> LatticeMode {
        self.mode
    }

    /// Increment magnitude per coordinate, `sqrt(T/N)`.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn dqv(&self) -> f64 {
        self.grid.dqv()
    }

    pub fn branch_count(&self) -> usize {
        1 << self.dim
    }

    pub fn branch_probability(&self) -> f64 {
        1.0 / self.branch_count() as f64
    }

    pub fn level_size(&self, level: usize) -> usize {
        match self.mode {
            LatticeMode::Recombining => (level + 1).pow(self.dim as u32),
            LatticeMode::FullTree => 1 << (self.dim * level),
        }
    }

    pub fn node_count(&self) -> usize {
        (0..=self.steps()).map(|i| self.level_size(i)).sum()
    }

    /// Increment of coordinate `k` along branch `b`.
    pub fn increment(&self, branch: usize, k: usize) -> f64 {
        if (branch >> k) & 1 == 1 {
            self.step
        } else {
            -self.step
        }
    }

    pub fn increments(&self, branch: usize) -> Vec<f64> {
        (0..self.dim).map(|k| self.increment(branch, k)).collect()
    }

    /// Index at level `level + 1` of child `branch` of `node`.
    pub fn child(&self, level: usize, node: usize, branch: usize) -> usize {
        match self.mode {
            LatticeMode::FullTree => (node << self.dim) | branch,
            LatticeMode::Recombining => {
                let base = level + 1;
                let next_base = level + 2;
                let mut rest = node;
                let mut index = 0;
                let mut scale = 1;
                for j in 0..self.dim {
                    let k = rest % base;
                    rest /= base;
                    index += (k + ((branch >> j) & 1)) * scale;
                    scale *= next_base;
                }
                index
            }
        }
    }

    pub fn children(&self, level: usize, node: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.branch_count()).map(move |b| self.child(level, node, b))
    }

    /// Number of up moves per coordinate on the way to `node`.
    pub fn up_counts(&self, level: usize, node: usize) -> Vec<usize> {
        let mut counts = vec![0; self.dim];
        match self.mode {
            LatticeMode::Recombining => {
                let base = level + 1;
                let mut rest = node;
                for c in counts.iter_mut() {
                    *c = rest % base;
                    rest /= base;
                }
            }
            LatticeMode::FullTree => {
                let mask = self.branch_count() - 1;
                for l in 0..level {
                    let chunk = (node >> (self.dim * (level - 1 - l))) & mask;
                    for (j, c) in counts.iter_mut().enumerate() {
                        *c += (chunk >> j) & 1;
                    }
                }
            }
        }
        counts
    }

    /// Walk value `W_{t_i}` at a node: `(2 k_j - i) sqrt(T/N)` per coordinate.
    pub fn walk_into(&self, level: usize, node: usize, out: &mut [f64]) {
        match self.mode {
            LatticeMode::Recombining => {
                let base = level + 1;
                let mut rest = node;
                for o in out.iter_mut().take(self.dim) {
                    let k = rest % base;
                    rest /= base;
                    *o = (2.0 * k as f64 - level as f64) * self.step;
                }
            }
            LatticeMode::FullTree => {
                for (j, o) in out.iter_mut().take(self.dim).enumerate() {
                    let mut k = 0u32;
                    for l in 0..level {
                        k += ((node >> (l * self.dim + j)) & 1) as u32;
                    }
                    *o = (2.0 * k as f64 - level as f64) * self.step;
                }
            }
        }
    }

    pub fn walk(&self, level: usize, node: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.walk_into(level, node, &mut out);
        out
    }

    /// Walk values at levels `0..=level` along the sign path of a full-tree
    /// node, flattened level-major (`(level + 1) * d` entries).
    pub fn node_path(&self, level: usize, node: usize) -> Result<Vec<f64>, LatticeError> {
        if self.mode != LatticeMode::FullTree {
            return Err(LatticeError::NotFullTree);
        }
        self.check_node(level, node)?;
        let mask = self.branch_count() - 1;
        let branches: Vec<usize> = (0..level)
            .map(|l| (node >> (self.dim * (level - 1 - l))) & mask)
            .collect();
        self.path_from_branches(&branches)
    }

    /// Walk values generated by an explicit branch sequence, in any mode.
    pub fn path_from_branches(&self, branches: &[usize]) -> Result<Vec<f64>, LatticeError> {
        if branches.len() > self.steps() {
            return Err(LatticeError::NoSuchLevel {
                level: branches.len(),
                steps: self.steps(),
            });
        }
        let d = self.dim;
        let mut out = vec![0.0; (branches.len() + 1) * d];
        let mut counts = vec![0usize; d];
        for (l, &b) in branches.iter().enumerate() {
            if b >= self.branch_count() {
                return Err(LatticeError::NoSuchBranch {
                    branch: b,
                    branches: self.branch_count(),
                });
            }
            let level = l + 1;
            for j in 0..d {
                counts[j] += (b >> j) & 1;
                out[level * d + j] = (2.0 * counts[j] as f64 - level as f64) * self.step;
            }
        }
        Ok(out)
    }

    pub fn check_node(&self, level: usize, node: usize) -> Result<(), LatticeError> {
        if level > self.steps() {
            return Err(LatticeError::NoSuchLevel {
                level,
                steps: self.steps(),
            });
        }
        let size = self.level_size(level);
        if node >= size {
            return Err(LatticeError::NoSuchNode { level, node, size });
        }
        Ok(())
    }

    fn gather_children(&self, next: &[f64], level: usize, node: usize) -> Result<Vec<f64>, LatticeError> {
        self.check_node(level, node)?;
        if level >= self.steps() {
            return Err(LatticeError::NoSuchLevel {
                level: level + 1,
                steps: self.steps(),
            });
        }
        self.children(level, node)
            .map(|c| {
                next.get(c).copied().ok_or(LatticeError::MissingChild {
                    level: level + 1,
                    node,
                    child: c,
                    len: next.len(),
                })
            })
            .collect()
    }

    /// `E[X_{i+1} | node]` for a scalar field `next` on level `level + 1`.
    pub fn cond_expectation(&self, next: &[f64], level: usize, node: usize) -> Result<f64, LatticeError> {
        let values = self.gather_children(next, level, node)?;
        Ok(self.mean_of_children(&values))
    }

    /// `E[X_{i+1} ΔW^k | node] / Δ<W>`.
    pub fn cond_covariation(
        &self,
        next: &[f64],
        level: usize,
        node: usize,
        k: usize,
    ) -> Result<f64, LatticeError> {
        let values = self.gather_children(next, level, node)?;
        Ok(self.covariation_of_children(&values, k))
    }

    /// Equal-weight mean of values listed in branch order.
    pub fn mean_of_children(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.branch_count());
        values.iter().sum::<f64>() * self.branch_probability()
    }

    /// Covariation with coordinate `k` of values listed in branch order.
    pub fn covariation_of_children(&self, values: &[f64], k: usize) -> f64 {
        debug_assert_eq!(values.len(), self.branch_count());
        let s: f64 = values
            .iter()
            .enumerate()
            .map(|(b, v)| v * self.increment(b, k))
            .sum();
        s * self.branch_probability() / self.dqv()
    }

    /// `max_{i,k} ||ΔW^k||_∞ / Δ<W>^{q/4}`; decays in `N` iff `q < 2`.
    pub fn check_w1(&self, q: f64) -> Result<f64, LatticeError> {
        if !(1.0..2.0).contains(&q) {
            return Err(LatticeError::ExponentOutOfRange(q));
        }
        Ok(self.step / self.dqv().powf(q / 4.0))
    }

    /// Cross-moment orthogonality and the sup ratio `||ΔW^k||_∞ / sqrt(Δ<W>)`.
    pub fn check_w2(&self) -> W2Check {
        let p = self.branch_probability();
        let mut max_cross = 0.0f64;
        for k in 0..self.dim {
            for l in (k + 1)..self.dim {
                let m: f64 = (0..self.branch_count())
                    .map(|b| p * self.increment(b, k) * self.increment(b, l))
                    .sum();
                max_cross = max_cross.max(m.abs());
            }
        }
        let sup_ratio = (0..self.branch_count())
            .flat_map(|b| (0..self.dim).map(move |k| (b, k)))
            .map(|(b, k)| self.increment(b, k).abs() / self.dqv().sqrt())
            .fold(0.0, f64::max);
        W2Check {
            orthogonal: max_cross <= 1e-15 * self.dqv(),
            max_cross_moment: max_cross,
            sup_ratio,
        }
    }

    /// Lagged piecewise-linear interpolation of the path through `node`.
    pub fn continuous_interpolation(
        &self,
        level: usize,
        node: usize,
    ) -> Result<ContinuousPath, LatticeError> {
        let values = self.node_path(level, node)?;
        ContinuousPath::new(self.grid, self.dim, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct W2Check {
    pub orthogonal: bool,
    pub max_cross_moment: f64,
    pub sup_ratio: f64,
}

/// The continuous, adapted approximation `W^{N,c}` of a walk path: zero on
/// `[0, h]`, then linear from `W_{t_{i-1}}` to `W_{t_i}` over
/// `[t_{i-1} + h, t_i + h]`, with `h` the mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousPath {
    grid: TimeGrid,
    dim: usize,
    /// Walk values at levels `0..=last`, level-major.
    values: Vec<f64>,
}

impl ContinuousPath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self, LatticeError> {
        if dim == 0 || values.is_empty() || !values.len().is_multiple_of(dim) {
            return Err(LatticeError::RaggedPath {
                len: values.len(),
                dim,
            });
        }
        if values.len() / dim > grid.steps() + 1 {
            return Err(LatticeError::NoSuchLevel {
                level: values.len() / dim - 1,
                steps: grid.steps(),
            });
        }
        Ok(Self { grid, dim, values })
    }

    /// Last level whose walk value is known.
    pub fn last_level(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    /// Latest time at which the interpolation is determined by the known levels.
    pub fn known_until(&self) -> f64 {
        self.grid.t(self.last_level()) + self.grid.mesh()
    }

    /// Coordinate `k` of `W^{N,c}_t`, or `None` if `t` lies beyond
    /// [`known_until`](Self::known_until).
    pub fn eval_coord(&self, t: f64, k: usize) -> Option<f64> {
        let h = self.grid.mesh();
        if t <= h {
            return Some(0.0);
        }
        if t > self.known_until() * (1.0 + 1e-14) {
            return None;
        }
        let u = (t - h) / h;
        let i = ((u.floor() as usize) + 1).min(self.last_level().max(1));
        let frac = (u - (i - 1) as f64).clamp(0.0, 1.0);
        let prev = self.values[(i - 1) * self.dim + k];
        let next = self.values[i * self.dim + k];
        Some(prev + frac * (next - prev))
    }

    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        (0..self.dim).map(|k| self.eval_coord(t, k)).collect()
    }

    /// `sup_{s <= t} |W^{N,c}_s|` (Euclidean), exact for a piecewise-linear path.
    pub fn running_sup_norm(&self, t: f64) -> Option<f64> {
        let h = self.grid.mesh();
        let mut best: f64 = 0.0;
        let mut level = 1;
        while level <= self.last_level() && self.grid.t(level) + h <= t {
            let v = &self.values[level * self.dim..(level + 1) * self.dim];
            best = best.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
            level += 1;
        }
        let end = self.eval(t)?;
        Some(best.max(end.iter().map(|x| x * x).sum::<f64>().sqrt()))
    }
}
