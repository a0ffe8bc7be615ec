//! Runtime evidence for the convergence theory: bounded multipliers,
//! descent of the augmented Lagrangian and finite binary termination.

use serde::{Deserialize, Serialize};

use super::{IterationRecord, SolverConfig};

/// Iterations at the start of a run excluded from the descent check.
pub const DESCENT_BURN_IN: usize = 5;
/// Allowed increase of the augmented Lagrangian, relative to `max(1, |L|)`.
pub const DESCENT_SLACK: f64 = 1e-8;
/// A last-quarter range below this fraction of the final level counts as a plateau.
pub const PLATEAU_REL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub max_lambda_norm: f64,
    /// `(max - min) / level` of `||Lambda||_F` over the last quarter of the trace.
    pub lambda_last_quarter_rel_range: f64,
    pub lambda_plateau: bool,
    /// Largest `L^k - L^{k-1}` after the burn-in; non-positive for a monotone trace.
    pub max_lagrangian_increase: f64,
    /// Share of post-burn-in iterations with `L^k <= L^{k-1} + slack`.
    pub descent_fraction: f64,
    pub first_binary_iteration: Option<usize>,
    pub beta_above_eta_quarter: bool,
}

pub fn theory_monitors(trace: &[IterationRecord], config: &SolverConfig) -> MonitorReport {
    let max_lambda_norm = trace.iter().map(|r| r.lambda_norm).fold(0.0, f64::max);

    let tail_start = if trace.len() >= 4 { trace.len() - trace.len() / 4 } else { 0 };
    let tail = &trace[tail_start..];
    let (lo, hi) = tail
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
            (lo.min(r.lambda_norm), hi.max(r.lambda_norm))
        });
    let range = if tail.is_empty() { 0.0 } else { hi - lo };
    let level = trace.last().map_or(0.0, |r| r.lambda_norm.abs());
    let rel = if range == 0.0 {
        0.0
    } else if level > 0.0 {
        range / level
    } else {
        f64::INFINITY
    };

    let mut max_inc = f64::NEG_INFINITY;
    let mut checked = 0usize;
    let mut descending = 0usize;
    for w in trace.windows(2).filter(|w| w[1].k > DESCENT_BURN_IN) {
        let inc = w[1].lagrangian - w[0].lagrangian;
        max_inc = max_inc.max(inc);
        checked += 1;
        if inc <= DESCENT_SLACK * w[0].lagrangian.abs().max(1.0) {
            descending += 1;
        }
    }

    MonitorReport {
        max_lambda_norm,
        lambda_last_quarter_rel_range: rel,
        lambda_plateau: max_lambda_norm.is_finite() && rel < PLATEAU_REL,
        max_lagrangian_increase: if checked == 0 { 0.0 } else { max_inc },
        descent_fraction: if checked == 0 { 1.0 } else { descending as f64 / checked as f64 },
        first_binary_iteration: trace.iter().find(|r| r.nonbinary_fraction == 0.0).map(|r| r.k),
        beta_above_eta_quarter: config.finite_termination_ok(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(k: usize, lagrangian: f64, lambda_norm: f64, nonbinary_fraction: f64) -> IterationRecord {
        IterationRecord {
            k,
            h: 0.0,
            p: 0.0,
            lagrangian,
            nonbinary_fraction,
            lambda_norm,
            objective_original: 0.0,
        }
    }

    #[test]
    fn monotone_trace_has_no_positive_jump() {
        let trace: Vec<_> = (1..=40).map(|k| rec(k, -(k as f64), 1.0, 0.5)).collect();
        let m = theory_monitors(&trace, &SolverConfig::default());
        assert!(m.max_lagrangian_increase <= 0.0);
        assert_eq!(m.descent_fraction, 1.0);
    }

    #[test]
    fn constant_lambda_is_a_plateau() {
        let trace: Vec<_> = (1..=40).map(|k| rec(k, 0.0, 3.0, 0.5)).collect();
        let m = theory_monitors(&trace, &SolverConfig::default());
        assert!(m.lambda_plateau);
        assert_eq!(m.max_lambda_norm, 3.0);
        assert_eq!(m.first_binary_iteration, None);
    }

    #[test]
    fn growing_lambda_is_not_a_plateau() {
        let trace: Vec<_> = (1..=40).map(|k| rec(k, 0.0, k as f64, 0.5)).collect();
        let m = theory_monitors(&trace, &SolverConfig::default());
        assert!(!m.lambda_plateau);
    }

    #[test]
    fn burn_in_increases_are_ignored_and_later_ones_reported() {
        let mut trace: Vec<_> = (1..=20).map(|k| rec(k, -(k as f64), 1.0, 0.0)).collect();
        trace[2].lagrangian = 100.0;
        let m = theory_monitors(&trace, &SolverConfig::default());
        assert!(m.max_lagrangian_increase <= 0.0);
        trace[10].lagrangian = 5.0;
        let m = theory_monitors(&trace, &SolverConfig::default());
        assert!((m.max_lagrangian_increase - 15.0).abs() < 1e-12);
        assert!(m.descent_fraction < 1.0);
        assert_eq!(m.first_binary_iteration, Some(1));
    }

    #[test]
    fn finite_termination_flag() {
        let cfg = SolverConfig { beta: 0.2, eta: 1.0, ..Default::default() };
        let m = theory_monitors(&[], &cfg);
        assert!(!m.beta_above_eta_quarter);
        assert!(theory_monitors(&[], &SolverConfig::default()).beta_above_eta_quarter);
    }
}
