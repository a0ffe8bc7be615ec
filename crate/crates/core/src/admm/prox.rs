//! Closed-form proximal map of `eta * sqrt(x)` restricted to `[0, 1]`.
//!
//! The scalar subproblem is `min_{0<=x<=1} beta/2 (x - r)^2 + eta sqrt(x)`.
//! Interior stationary points satisfy `beta (x - r) + eta / (2 sqrt x) = 0`;
//! with `t = x^{-1/2}` this becomes the cubic
//!
//! ```text
//! (eta/2) t^3 - beta r t^2 + beta = 0,   t > 1.
//! ```

use std::f64::consts::PI;

/// Objective values closer than this (relative to `max(1, |f|)`) count as tied.
pub const TIE_TOL: f64 = 1e-12;

/// Real roots of `a t^3 + b t^2 + c t + d = 0` with `a != 0`, ascending.
///
/// Uses the depressed cubic: Cardano's formula when the discriminant is
/// positive (one real root), the trigonometric form otherwise. Each root is
/// polished by one Newton step on the original polynomial.
pub fn real_cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    debug_assert!(a != 0.0);
    let (b1, c1, d1) = (b / a, c / a, d / a);
    let shift = b1 / 3.0;
    let p = c1 - b1 * b1 / 3.0;
    let q = 2.0 * b1 * b1 * b1 / 27.0 - b1 * c1 / 3.0 + d1;

    let half_q = 0.5 * q;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;

    let mut roots = if p == 0.0 && q == 0.0 {
        vec![0.0]
    } else if disc > 0.0 {
        // pick the sign that avoids cancellation
        let u = (-half_q - half_q.signum() * disc.sqrt()).cbrt();
        let s = if u == 0.0 { 0.0 } else { u - third_p / u };
        vec![s]
    } else {
        let rho = (-third_p).sqrt();
        let arg = (-half_q / (rho * rho * rho)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| 2.0 * rho * (phi - 2.0 * PI * k as f64 / 3.0).cos())
            .collect()
    };

    for s in roots.iter_mut() {
        let t = *s - shift;
        let f = ((a * t + b) * t + c) * t + d;
        let df = (3.0 * a * t + 2.0 * b) * t + c;
        *s = if df != 0.0 && (f / df).is_finite() { t - f / df } else { t };
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// All real roots greater than one of `(eta/2) t^3 - beta r t^2 + beta = 0`, ascending.
pub fn cubic_roots_gt1(eta: f64, beta: f64, r: f64) -> Vec<f64> {
    if eta <= 0.0 {
        return Vec::new();
    }
    real_cubic_roots(0.5 * eta, -beta * r, 0.0, beta)
        .into_iter()
        .filter(|&t| t > 1.0)
        .collect()
}

/// Largest real root greater than one, if any.
pub fn cubic_largest_root_gt1(eta: f64, beta: f64, r: f64) -> Option<f64> {
    cubic_roots_gt1(eta, beta, r).last().copied()
}

#[inline]
pub fn prox_objective(x: f64, r: f64, beta: f64, eta: f64) -> f64 {
    let d = x - r;
    0.5 * beta * d * d + eta * x.sqrt()
}

/// Global minimizer of `beta/2 (x - r)^2 + eta sqrt(x)` over `[0, 1]`.
///
/// Candidates are `0`, `1` and `t^{-2}` for every cubic root `t > 1`. Both
/// roots are needed: the smaller `t` (larger `x`) is the interior local
/// minimum, the larger `t` is the local maximum near zero. Ties resolve to
/// `0`, then `1`, then the interior point.
pub fn scalar_prox(r: f64, beta: f64, eta: f64) -> f64 {
    if eta == 0.0 {
        return r.clamp(0.0, 1.0);
    }
    let mut best_x = 0.0;
    let mut best_f = prox_objective(0.0, r, beta, eta);
    let mut consider = |x: f64| {
        let f = prox_objective(x, r, beta, eta);
        if f < best_f - TIE_TOL * best_f.abs().max(1.0) {
            best_x = x;
            best_f = f;
        }
    };
    consider(1.0);
    for t in cubic_roots_gt1(eta, beta, r) {
        consider((1.0 / (t * t)).clamp(0.0, 1.0));
    }
    best_x
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Dense grid search, independent of the cubic.
    fn grid_argmin(r: f64, beta: f64, eta: f64, steps: usize) -> (f64, f64) {
        (0..=steps)
            .map(|k| k as f64 / steps as f64)
            .map(|x| (x, prox_objective(x, r, beta, eta)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
    }

    #[test]
    fn pure_box_projection_without_penalty() {
        assert_eq!(scalar_prox(0.5, 1.0, 0.0), 0.5);
        assert_eq!(scalar_prox(-3.0, 1.0, 0.0), 0.0);
        assert_eq!(scalar_prox(7.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn prox_picks_one_over_spurious_stationary_point() {
        // t^3 - 8t^2 + 4 = 0; largest root ~7.9365 -> x ~0.01588, objective ~4.063
        let t = cubic_largest_root_gt1(1.0, 2.0, 2.0).unwrap();
        assert!((t - 7.936_495_81).abs() < 1e-6);
        let x = 1.0 / (t * t);
        assert!((prox_objective(x, 2.0, 2.0, 1.0) - 4.062_748).abs() < 1e-5);
        assert_eq!(scalar_prox(2.0, 2.0, 1.0), 1.0);
        let (gx, _) = grid_argmin(2.0, 2.0, 1.0, 1_000_000);
        assert_eq!(gx, 1.0);
    }

    #[test]
    fn prox_picks_zero_when_no_root() {
        assert!(cubic_largest_root_gt1(1.0, 1.0, 0.1).is_none());
        assert_eq!(scalar_prox(0.1, 1.0, 1.0), 0.0);
        let (gx, gf) = grid_argmin(0.1, 1.0, 1.0, 1_000_000);
        assert_eq!(gx, 0.0);
        assert!((gf - 0.005).abs() < 1e-15);
    }

    #[test]
    fn prox_finds_interior_minimum() {
        // grid oracle: argmin ~0.499292, value ~0.0706857
        let x = scalar_prox(0.5, 100.0, 0.1);
        assert!((x - 0.499_292).abs() < 2e-6);
        assert!(prox_objective(x, 0.5, 100.0, 0.1) <= 0.070_685_660_423_63 + 1e-12);
    }

    #[test]
    fn cubic_examples() {
        // t^3 - 4t^2 + 2 = 0: roots 3.86619826, 0.78924412, -0.65544238
        let t = cubic_largest_root_gt1(2.0, 2.0, 2.0).unwrap();
        assert!((t - 3.866_198_26).abs() < 1e-7);
        let all = real_cubic_roots(1.0, -4.0, 0.0, 2.0);
        assert_eq!(all.len(), 3);
        for (got, want) in all.iter().zip([-0.655_442_38, 0.789_244_12, 3.866_198_26]) {
            assert!((got - want).abs() < 1e-7);
        }
        assert!(cubic_largest_root_gt1(2.0, 2.0, 0.0).is_none());
        assert!(cubic_largest_root_gt1(0.0, 2.0, 5.0).is_none());
    }

    #[test]
    fn cubic_root_residual() {
        for &(eta, beta, r) in &[(2.0, 2.0, 2.0), (1.0, 2.0, 2.0), (0.3, 7.0, 1.1), (5.0, 50.0, 2.5)] {
            for t in cubic_roots_gt1(eta, beta, r) {
                let res = 0.5 * eta * t * t * t - beta * r * t * t + beta;
                assert!(res.abs() <= 1e-10 * (1.0 + beta), "residual {res} at {t}");
            }
        }
    }

    #[test]
    fn one_real_root_branch() {
        // t^3 + t + 1 = 0 has a single real root ~ -0.6823278
        let r = real_cubic_roots(1.0, 0.0, 1.0, 1.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] + 0.682_327_803_8).abs() < 1e-9);
        // (t-2)^3
        let r = real_cubic_roots(1.0, -6.0, 12.0, -8.0);
        assert!(r.iter().all(|t| (t - 2.0).abs() < 1e-6));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prox_is_within_box_and_beats_coarse_grid(
                r in -2.0f64..3.0, beta in 0.1f64..100.0, eta in 0.0f64..10.0
            ) {
                let x = scalar_prox(r, beta, eta);
                prop_assert!((0.0..=1.0).contains(&x));
                let (_, gf) = grid_argmin(r, beta, eta, 2000);
                prop_assert!(prox_objective(x, r, beta, eta) <= gf + 1e-8);
            }

            #[test]
            fn stationary_roots_satisfy_first_order_condition(
                r in 0.0f64..3.0, beta in 0.1f64..100.0, eta in 0.01f64..10.0
            ) {
                for t in cubic_roots_gt1(eta, beta, r) {
                    let x = 1.0 / (t * t);
                    let g = beta * (x - r) + 0.5 * eta / x.sqrt();
                    prop_assert!(g.abs() <= 1e-7 * (1.0 + beta * (1.0 + r.abs()) + eta * t));
                }
            }
        }
    }
}
