//! Values attached to lattice nodes.

use serde::Serialize;

/// Which half-open interval a stored value covers.
///
/// `Y` and `M` are constant on `[t_i, t_{i+1})` and live at level `i`.
/// `Z` and the controls `μ` are constant on `(t_i, t_{i+1}]`; being
/// predictable they are stored at the level-`i` parent of the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    LeftConstant,
    RightConstant,
}

/// Per-level node arrays with a fixed number of components per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptedField {
    timing: Timing,
    arity: usize,
    levels: Vec<Vec<f64>>,
}

impl AdaptedField {
    /// Builds a field from flattened per-level arrays (`arity` entries per node).
    ///
    /// Panics if a level length is not a multiple of `arity`.
    pub fn new(timing: Timing, arity: usize, levels: Vec<Vec<f64>>) -> Self {
        assert!(arity > 0, "field arity must be positive");
        for (i, l) in levels.iter().enumerate() {
            assert!(
                l.len() % arity == 0,
                "level {i} has {} entries, not a multiple of arity {arity}",
                l.len()
            );
        }
        Self {
            timing,
            arity,
            levels,
        }
    }

    pub fn timing(&self) -> Timing {
        self.timing
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.levels[i]
    }

    pub fn level_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.levels[i]
    }

    pub fn nodes_at(&self, i: usize) -> usize {
        self.levels[i].len() / self.arity
    }

    pub fn get(&self, level: usize, node: usize) -> &[f64] {
        &self.levels[level][node * self.arity..(node + 1) * self.arity]
    }

    /// First component at a node; the whole value for scalar fields.
    pub fn scalar(&self, level: usize, node: usize) -> f64 {
        self.levels[level][node * self.arity]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<Vec<f64>> {
        self.levels
    }

    /// Largest absolute component over the whole field (0 for an empty field).
    pub fn max_abs(&self) -> f64 {
        self.levels.iter().flatten().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    /// Largest Euclidean norm of a node value.
    pub fn max_norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        for l in &self.levels {
            for chunk in l.chunks(self.arity) {
                best = best.max(chunk.iter().map(|v| v * v).sum::<f64>().sqrt());
            }
        }
        best
    }

    /// Elementwise map into a new field with the same shape.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            timing: self.timing,
            arity: self.arity,
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn access_by_node() {
        let f = AdaptedField::new(
            Timing::RightConstant,
            2,
            vec![vec![1.0, 2.0], vec![3.0, -4.0, 5.0, 6.0]],
        );
        assert_eq!(f.nodes_at(1), 2);
        assert_eq!(f.get(1, 1), &[5.0, 6.0]);
        assert_eq!(f.scalar(1, 0), 3.0);
        assert_eq!(f.max_abs(), 6.0);
        assert!((f.max_norm() - 61f64.sqrt()).abs() < 1e-15);
        assert_eq!(f.map(|v| 2.0 * v).get(0, 0), &[2.0, 4.0]);
    }

    #[test]
    #[should_panic]
    fn ragged_level_panics() {
        AdaptedField::new(Timing::LeftConstant, 2, vec![vec![1.0]]);
    }
}
