//! Ground truth for small instances: exhaustive enumeration of the
//! assignment set, brute-force optimum, a pairwise-swap certificate, an
//! independent projection solver and numerical KKT residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, objective_original, AssignmentProblem};

pub const DEFAULT_ENUMERATION_CAP: usize = 16;
/// Entry classification tolerance for [`kkt_residual`].
pub const KKT_TOL: f64 = 1e-8;

/// `n! / (b!)^m`, the number of balanced assignments.
pub fn assignment_count(n: usize, m: usize, b: usize) -> u128 {
    // product of binomials C(n - j b, b), exact in u128 for the sizes we allow
    let mut total: u128 = 1;
    let mut left = n as u128;
    for _ in 0..m {
        total *= binomial(left, b as u128);
        left -= b as u128;
    }
    total
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Walks every balanced assignment once as a row-to-group label vector.
///
/// Labels are generated as multiset permutations of `[0^b, 1^b, ..., (m-1)^b]`
/// in lexicographic order.
#[derive(Debug, Clone)]
pub struct EnumerationCursor {
    labels: Vec<usize>,
    m: usize,
    exhausted: bool,
    started: bool,
}

impl EnumerationCursor {
    fn new(m: usize, b: usize) -> Self {
        Self {
            labels: (0..m).flat_map(|j| std::iter::repeat_n(j, b)).collect(),
            m,
            exhausted: false,
            started: false,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.exhausted
    }

    /// Advances and returns the next label vector.
    pub fn next_labels(&mut self) -> Option<&[usize]> {
        if self.exhausted {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.labels);
        }
        if next_permutation(&mut self.labels) {
            Some(&self.labels)
        } else {
            self.exhausted = true;
            None
        }
    }
}

impl Iterator for EnumerationCursor {
    type Item = DMatrix<f64>;

    fn next(&mut self) -> Option<Self::Item> {
        let m = self.m;
        self.next_labels().map(|l| labels_to_matrix(l, m))
    }
}

fn next_permutation(v: &mut [usize]) -> bool {
    let n = v.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

pub fn labels_to_matrix(labels: &[usize], m: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(labels.len(), m);
    for (i, &j) in labels.iter().enumerate() {
        x[(i, j)] = 1.0;
    }
    x
}

/// Column of the single one in each row of a binary assignment matrix.
pub fn matrix_to_labels(x: &DMatrix<f64>) -> Result<Vec<usize>> {
    x.row_iter()
        .enumerate()
        .map(|(i, row)| {
            let ones: Vec<usize> = row
                .iter()
                .enumerate()
                .filter(|(_, &v)| v == 1.0)
                .map(|(j, _)| j)
                .collect();
            if ones.len() != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Infeasible(format!("row {i} is not a unit vector")));
            }
            Ok(ones[0])
        })
        .collect()
}

pub fn enumerate_assignments(n: usize, m: usize, b: usize) -> Result<EnumerationCursor> {
    enumerate_assignments_capped(n, m, b, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_assignments_capped(n: usize, m: usize, b: usize, cap: usize) -> Result<EnumerationCursor> {
    if m == 0 || b == 0 || n != m * b {
        return Err(Error::Config(format!("need n = m * b, got n = {n}, m = {m}, b = {b}")));
    }
    if n > cap {
        let count = if n <= 34 {
            assignment_count(n, m, b).to_string()
        } else {
            "more than 10^38".into()
        };
        return Err(Error::TooLarge { n, cap, count });
    }
    Ok(EnumerationCursor::new(m, b))
}

/// Global minimizer of the original objective over all assignments.
/// Ties keep the first in enumeration order.
pub fn brute_force_solve(problem: &AssignmentProblem) -> Result<(DMatrix<f64>, f64)> {
    brute_force_solve_capped(problem, DEFAULT_ENUMERATION_CAP)
}

pub fn brute_force_solve_capped(problem: &AssignmentProblem, cap: usize) -> Result<(DMatrix<f64>, f64)> {
    let (n, m, b) = (problem.n(), problem.m(), problem.b());
    let mut cursor = enumerate_assignments_capped(n, m, b, cap)?;
    let (a, g) = (problem.a(), problem.g());
    let mut best: Option<(Vec<usize>, f64)> = None;
    while let Some(labels) = cursor.next_labels() {
        let f = labeled_objective(a, g, labels);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((labels.to_vec(), f));
        }
    }
    let (labels, f) = best.expect("enumeration yields at least one assignment");
    Ok((labels_to_matrix(&labels, m), f))
}

/// `1/2 sum_{i,i' same group} A_ii' + sum_i G_{i, label_i}`.
fn labeled_objective(a: &DMatrix<f64>, g: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut quad = 0.0;
    for i in 0..n {
        for k in 0..n {
            if labels[i] == labels[k] {
                quad += a[(i, k)];
            }
        }
    }
    let lin: f64 = labels.iter().enumerate().map(|(i, &j)| g[(i, j)]).sum();
    0.5 * quad + lin
}

/// True iff no exchange of two rows between two different columns lowers the
/// original objective. Improvements smaller than `1e-12 * max(1, |f|)` are
/// treated as rounding noise.
pub fn swap_local_opt_check(x: &DMatrix<f64>, problem: &AssignmentProblem) -> Result<bool> {
    let report = model::feasibility(x, problem, 0.0)?;
    if !report.is_assignment {
        return Err(Error::Infeasible(format!(
            "row residual {:.3e}, column residual {:.3e}, non-binary fraction {}",
            report.row_residual, report.col_residual, report.nonbinary_fraction
        )));
    }
    let mut labels = matrix_to_labels(x)?;
    let (a, g) = (problem.a(), problem.g());
    let f0 = labeled_objective(a, g, &labels);
    let tol = 1e-12 * f0.abs().max(1.0);
    let n = labels.len();
    for i in 0..n {
        for k in (i + 1)..n {
            if labels[i] == labels[k] {
                continue;
            }
            labels.swap(i, k);
            let f = labeled_objective(a, g, &labels);
            labels.swap(i, k);
            if f < f0 - tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Reference projection onto `{Y 1_m = 1_n, 1_n^T Y = b 1_m^T}` from the
/// multiplier system.
///
/// Writes `Y = B - nu 1^T - 1 mu^T`, substitutes into the constraints and
/// solves the resulting `(n + m)` linear system. One column constraint is
/// implied by the others, so it is dropped together with `mu_{m-1}`.
pub fn projection_normal_equations(bmat: &DMatrix<f64>, n: usize, m: usize, b: usize) -> Result<DMatrix<f64>> {
    model::check_shape("B", bmat, n, m)?;
    let dim = n + m - 1;
    let mut sys = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    let row_sums = bmat.column_sum();
    let col_sums = bmat.row_sum();
    // row i: m nu_i + sum_j mu_j = rowsum_i - 1
    for i in 0..n {
        sys[(i, i)] = m as f64;
        for j in 0..m - 1 {
            sys[(i, n + j)] = 1.0;
        }
        rhs[i] = row_sums[i] - 1.0;
    }
    // column j < m-1: sum_i nu_i + n mu_j = colsum_j - b
    for j in 0..m - 1 {
        for i in 0..n {
            sys[(n + j, i)] = 1.0;
        }
        sys[(n + j, n + j)] = n as f64;
        rhs[n + j] = col_sums[j] - b as f64;
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Config("singular multiplier system".into()))?;
    Ok(DMatrix::from_fn(n, m, |i, j| {
        let mu = if j < m - 1 { sol[n + j] } else { 0.0 };
        bmat[(i, j)] - sol[i] - mu
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktResidualReport {
    /// `max |S_ij - nu_i - mu_j|` over interior entries.
    pub stationarity_residual: f64,
    pub multiplier_nu: Vec<f64>,
    pub multiplier_mu: Vec<f64>,
    /// `max (S_ij - nu_i - mu_j)_+` over entries at the upper bound.
    pub complementarity_violation: f64,
    pub interior_count: usize,
}

/// Numerical KKT residual of `X` for the regularized relaxation.
///
/// With `S = A X + G + eta / 2 X^{-1/2}` the conditions are
/// `S_ij = nu_i + mu_j` on interior entries, `S_ij - nu_i - mu_j <= 0` at
/// `X_ij = 1` (the box multiplier there is non-negative), and nothing at
/// `X_ij = 0` where the subdifferential of `sqrt` is unbounded. The
/// multipliers are fitted by least squares on the interior entries; a row
/// holding a one has no interior entry, so its `nu_i` is free and set to the
/// smallest value satisfying its upper-bound conditions.
pub fn kkt_residual(x: &DMatrix<f64>, problem: &AssignmentProblem, eta: f64) -> Result<KktResidualReport> {
    problem.check_shape("X", x)?;
    let report = model::feasibility(x, problem, KKT_TOL)?;
    if report.box_violation > KKT_TOL {
        return Err(Error::Indicator("box constraint 0 <= X <= 1"));
    }
    let (n, m) = (problem.n(), problem.m());
    let ax = problem.a() * x;
    let s = DMatrix::from_fn(n, m, |i, j| {
        let v = x[(i, j)].max(0.0);
        let pen = if v > 0.0 { 0.5 * eta / v.sqrt() } else { 0.0 };
        ax[(i, j)] + problem.g()[(i, j)] + pen
    });

    let interior: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| x[(i, j)] > KKT_TOL && x[(i, j)] < 1.0 - KKT_TOL)
        .collect();

    let mut nu = vec![0.0; n];
    let mut mu = vec![0.0; m];
    let mut stationarity = 0.0_f64;
    if !interior.is_empty() {
        let mut design = DMatrix::<f64>::zeros(interior.len(), n + m);
        let mut target = DVector::<f64>::zeros(interior.len());
        for (e, &(i, j)) in interior.iter().enumerate() {
            design[(e, i)] = 1.0;
            design[(e, n + j)] = 1.0;
            target[e] = s[(i, j)];
        }
        let sol = design
            .svd(true, true)
            .solve(&target, 1e-12)
            .map_err(|e| Error::Config(format!("least squares failed: {e}")))?;
        nu.copy_from_slice(&sol.as_slice()[..n]);
        mu.copy_from_slice(&sol.as_slice()[n..]);
        for &(i, j) in &interior {
            stationarity = stationarity.max((s[(i, j)] - nu[i] - mu[j]).abs());
        }
    }

    let mut complementarity = 0.0_f64;
    for i in 0..n {
        let ones: Vec<usize> = (0..m).filter(|&j| x[(i, j)] >= 1.0 - KKT_TOL).collect();
        if ones.is_empty() {
            continue;
        }
        let has_interior = interior.iter().any(|&(r, _)| r == i);
        if !has_interior {
            nu[i] = ones.iter().map(|&j| s[(i, j)] - mu[j]).fold(f64::NEG_INFINITY, f64::max);
        }
        for &j in &ones {
            complementarity = complementarity.max(s[(i, j)] - nu[i] - mu[j]);
        }
    }

    Ok(KktResidualReport {
        stationarity_residual: stationarity,
        multiplier_nu: nu,
        multiplier_mu: mu,
        complementarity_violation: complementarity.max(0.0),
        interior_count: interior.len(),
    })
}

/// Serializable brute-force result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleExport {
    pub f_opt: f64,
    #[serde(rename = "X_opt")]
    pub x_opt: Vec<u8>,
    pub n: usize,
    pub m: usize,
    pub candidates: String,
}

impl OracleExport {
    pub fn new(x: &DMatrix<f64>, f_opt: f64, candidates: u128) -> Self {
        Self {
            f_opt,
            x_opt: model::row_major(x).into_iter().map(|v| v as u8).collect(),
            n: x.nrows(),
            m: x.ncols(),
            candidates: candidates.to_string(),
        }
    }
}

/// Lower-bound check helper: `objective_original(x) - f_opt`.
pub fn optimality_gap(problem: &AssignmentProblem, x: &DMatrix<f64>, f_opt: f64) -> Result<f64> {
    Ok(objective_original(problem, x)? - f_opt)
}
