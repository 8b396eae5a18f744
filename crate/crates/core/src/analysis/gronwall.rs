//! Backward discrete Gronwall inequality on a time grid.
//!
//! If `|h(T)| <= a` and `|h(t_i)| <= a + b Σ_{j=i+1}^{N} |h(t_{j-1})| Δ` for all
//! `i`, and `bΔ < 1`, then `|h(t_i)| <= 2a exp(b(T - t_i))`.

use serde::Serialize;

use crate::lattice::TimeGrid;

const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GronwallVerdict {
    Pass,
    PremiseFail {
        level: usize,
    },
    /// `bΔ >= 1`: the conclusion is not claimed.
    StepTooLarge,
    ConclusionFail {
        level: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GronwallReport {
    pub verdict: GronwallVerdict,
    /// `max_i |h(t_i)| / (2a exp(b(T - t_i)))`.
    pub max_ratio: f64,
}

impl GronwallReport {
    pub fn passed(&self) -> bool {
        self.verdict == GronwallVerdict::Pass
    }
}

/// `h` holds the values at `t_0, ..., t_N`. The premise is checked first, with
/// a relative slack of `1e-12`.
pub fn gronwall_bound(h: &[f64], a: f64, b: f64, grid: &TimeGrid) -> GronwallReport {
    let n = grid.steps();
    assert_eq!(h.len(), n + 1, "one value per grid point");
    let dqv = grid.dqv();
    let horizon = grid.horizon();

    let envelope = |i: usize| 2.0 * a * (b * (horizon - grid.t(i))).exp();
    let max_ratio = (0..=n).map(|i| h[i].abs() / envelope(i)).fold(0.0, f64::max);
    let report = |verdict| GronwallReport { verdict, max_ratio };

    // running Σ_{j=i+1}^{N} |h(t_{j-1})| = Σ_{m=i}^{N-1} |h(t_m)|
    let mut tail = 0.0;
    for i in (0..=n).rev() {
        if i < n {
            tail += h[i].abs();
        }
        let rhs = a + b * tail * dqv;
        if h[i].abs() > rhs + TOL * (1.0 + rhs.abs()) {
            return report(GronwallVerdict::PremiseFail { level: i });
        }
    }
    if b * dqv >= 1.0 {
        return report(GronwallVerdict::StepTooLarge);
    }
    for i in 0..=n {
        if h[i].abs() > envelope(i) * (1.0 + TOL) {
            return report(GronwallVerdict::ConclusionFail { level: i });
        }
    }
    report(GronwallVerdict::Pass)
}

/// The sequence meeting the premise with equality:
/// `H(t_i) = a (1 - bΔ)^{-(N-i)}`. Needs `bΔ < 1`.
pub fn gronwall_extremal(a: f64, b: f64, grid: &TimeGrid) -> Vec<f64> {
    let n = grid.steps();
    let x = b * grid.dqv();
    assert!(x < 1.0, "extremal sequence needs bΔ < 1");
    (0..=n).map(|i| a * (1.0 - x).powi(-((n - i) as i32))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(n, 1.0).unwrap()
    }

    #[test]
    fn trivial_sequences() {
        let g = grid(10);
        assert!(gronwall_bound(&[0.0; 11], 1.0, 2.0, &g).passed());
        let r = gronwall_bound(&[1.5; 11], 1.5, 0.0, &g);
        assert!(r.passed());
        assert!((r.max_ratio - 0.5).abs() < 1e-15);
    }

    #[test]
    fn extremal_meets_premise_with_equality() {
        let g = grid(50);
        let (a, b) = (0.7, 2.0);
        let h = gronwall_extremal(a, b, &g);
        for i in 0..=50 {
            let sum: f64 = (i + 1..=50).map(|j| h[j - 1]).sum();
            let rhs = a + b * sum * g.dqv();
            assert!((h[i] - rhs).abs() < 1e-12 * rhs);
        }
        assert!(gronwall_bound(&h, a, b, &g).passed());
    }

    #[test]
    fn classifications() {
        let g = grid(10);
        let mut h = gronwall_extremal(1.0, 2.0, &g);
        h[4] *= 1.01;
        assert_eq!(
            gronwall_bound(&h, 1.0, 2.0, &g).verdict,
            GronwallVerdict::PremiseFail { level: 4 }
        );
        assert_eq!(
            gronwall_bound(&[2.0; 11], 1.0, 0.0, &g).verdict,
            GronwallVerdict::PremiseFail { level: 10 }
        );
        let coarse = grid(2);
        assert_eq!(
            gronwall_bound(&[0.0; 3], 1.0, 2.0, &coarse).verdict,
            GronwallVerdict::StepTooLarge
        );
    }

    #[test]
    fn conclusion_can_fail_near_the_step_limit() {
        // bΔ = 0.9: the premise holds but the envelope is too small
        let g = grid(10);
        let h = gronwall_extremal(1.0, 9.0, &g);
        let r = gronwall_bound(&h, 1.0, 9.0, &g);
        assert!(
            matches!(r.verdict, GronwallVerdict::ConclusionFail { .. }),
            "{r:?}"
        );
    }
}
