//! Problem data, feasibility predicates, objectives and penalty thresholds.
//!
//! The problem is
//!
//! ```text
//! min  1/2 <A, X X^T> + <G, X>   over   X in {0,1}^{n x m},  X 1_m = 1_n,  1_n^T X = b 1_m^T
//! ```
//!
//! with `b = n / m`. Its box relaxation (the transportation polytope) is
//! regularized with `eta * sum_ij sqrt(X_ij)`, which pushes entries to
//! `{0, 1}` once `eta` is large enough.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance on `||A - A^T||_F`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Relative tolerance on the smallest eigenvalue of `A`.
pub const PSD_TOL: f64 = 1e-8;
/// Entries above `-NEG_TOL` are clamped to zero before taking square roots.
pub const NEG_TOL: f64 = 1e-12;
/// Affine-feasibility slack for the `Y` indicator in the augmented Lagrangian.
pub const AFFINE_TOL: f64 = 1e-8;

/// Data `(A, G, n, m, b)` of a quadratic program over balanced assignment matrices.
#[derive(Debug, Clone)]
pub struct AssignmentProblem {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    n: usize,
    m: usize,
    b: usize,
    findings: Vec<String>,
}

/// Result of [`validate`]: the batch capacity and non-fatal findings.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    pub b: usize,
    pub findings: Vec<String>,
}

impl ValidationOutcome {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks sizes, divisibility and symmetry (hard errors) and positive
/// semi-definiteness (a warning recorded in `findings`).
pub fn validate(a: &DMatrix<f64>, g: &DMatrix<f64>, m: usize) -> Result<ValidationOutcome> {
    let n = a.nrows();
    if n == 0 || m == 0 {
        return Err(Error::Config("n and m must be positive".into()));
    }
    if a.ncols() != n {
        return Err(Error::Dimension {
            what: "A",
            got_rows: a.nrows(),
            got_cols: a.ncols(),
            want_rows: n,
            want_cols: n,
        });
    }
    if g.nrows() != n || g.ncols() != m {
        return Err(Error::Dimension {
            what: "G",
            got_rows: g.nrows(),
            got_cols: g.ncols(),
            want_rows: n,
            want_cols: m,
        });
    }
    if !n.is_multiple_of(m) {
        return Err(Error::Divisibility { n, m });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("A"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("G"));
    }

    let a_norm = a.norm();
    let gap = (a - a.transpose()).norm();
    let tol = SYMMETRY_TOL * a_norm.max(1.0);
    if gap > tol {
        return Err(Error::Asymmetric { gap, tol });
    }

    let mut findings = Vec::new();
    let eig = SymmetricEigen::new(a.clone()).eigenvalues;
    let spectral = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -PSD_TOL * spectral {
        findings.push(format!(
            "A is not positive semi-definite: smallest eigenvalue {min_eig:.3e}"
        ));
    }
    Ok(ValidationOutcome { b: n / m, findings })
}

impl AssignmentProblem {
    /// Builds a validated problem. PSD violations are logged, not rejected.
    pub fn new(a: DMatrix<f64>, g: DMatrix<f64>, m: usize) -> Result<Self> {
        let outcome = validate(&a, &g, m)?;
        for f in &outcome.findings {
            warn!("{f}");
        }
        let n = a.nrows();
        Ok(Self {
            a,
            g,
            n,
            m,
            b: outcome.b,
            findings: outcome.findings,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn b(&self) -> usize {
        self.b
    }

    /// Warnings raised while validating (currently only the PSD check).
    pub fn findings(&self) -> &[String] {
        &self.findings
    }

    pub fn validation(&self) -> ValidationOutcome {
        ValidationOutcome {
            b: self.b,
            findings: self.findings.clone(),
        }
    }

    pub(crate) fn check_shape(&self, what: &'static str, x: &DMatrix<f64>) -> Result<()> {
        check_shape(what, x, self.n, self.m)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: ProblemFile = serde_json::from_str(s)?;
        file.into_problem()
    }

    pub fn to_file(&self) -> ProblemFile {
        ProblemFile {
            n: self.n,
            m: self.m,
            a: row_major(&self.a),
            g: row_major(&self.g),
        }
    }
}

/// On-disk problem format: row-major `A` (`n*n`) and `G` (`n*m`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
}

impl ProblemFile {
    pub fn into_problem(self) -> Result<AssignmentProblem> {
        let (n, m) = (self.n, self.m);
        if self.a.len() != n * n {
            return Err(Error::Parse(format!(
                "A has {} entries, expected n*n = {}",
                self.a.len(),
                n * n
            )));
        }
        if self.g.len() != n * m {
            return Err(Error::Parse(format!(
                "G has {} entries, expected n*m = {}",
                self.g.len(),
                n * m
            )));
        }
        if self.a.iter().chain(self.g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("problem file"));
        }
        let a = DMatrix::from_row_slice(n, n, &self.a);
        let g = DMatrix::from_row_slice(n, m, &self.g);
        AssignmentProblem::new(a, g, m)
    }
}

pub fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    x.transpose().as_slice().to_vec()
}

pub(crate) fn check_shape(what: &'static str, x: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if x.nrows() != rows || x.ncols() != cols {
        return Err(Error::Dimension {
            what,
            got_rows: x.nrows(),
            got_cols: x.ncols(),
            want_rows: rows,
            want_cols: cols,
        });
    }
    Ok(())
}

/// `1/2 <A, X X^T> + <G, X>`.
pub fn objective_original(problem: &AssignmentProblem, x: &DMatrix<f64>) -> Result<f64> {
    problem.check_shape("X", x)?;
    Ok(quadratic_linear(problem.a(), problem.g(), x))
}

pub(crate) fn quadratic_linear(a: &DMatrix<f64>, g: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    0.5 * (a * x).dot(x) + g.dot(x)
}

/// `sum_ij sqrt(X_ij)`, with entries in `[-NEG_TOL, 0)` treated as zero.
pub fn half_quasi_norm(x: &DMatrix<f64>) -> Result<f64> {
    let mut s = 0.0;
    for (j, col) in x.column_iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if v < -NEG_TOL {
                return Err(Error::NegativeEntry { row: i, col: j, value: v });
            }
            s += v.max(0.0).sqrt();
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub quadratic: f64,
    pub linear: f64,
    pub regularizer: f64,
    pub total: f64,
}

/// `F(X) = 1/2 <A, X X^T> + <G, X> + eta * sum sqrt(X_ij)`, term by term.
pub fn objective_regularized(
    problem: &AssignmentProblem,
    x: &DMatrix<f64>,
    eta: f64,
) -> Result<ObjectiveBreakdown> {
    problem.check_shape("X", x)?;
    let quadratic = 0.5 * (problem.a() * x).dot(x);
    let linear = problem.g().dot(x);
    let regularizer = eta * half_quasi_norm(x)?;
    Ok(ObjectiveBreakdown {
        quadratic,
        linear,
        regularizer,
        total: quadratic + linear + regularizer,
    })
}

/// Augmented Lagrangian of the split problem,
///
/// `1/2 <A, X Y^T> + <G, Y> + eta ||X||_{1/2}^{1/2} + <Lambda, Y - X> + beta/2 ||Y - X||_F^2`.
///
/// The box indicator on `X` and the affine indicator on `Y` are enforced as
/// preconditions: a point outside either set is an error rather than `+inf`.
/// At `X = Y` this reduces to the regularized objective.
pub fn augmented_lagrangian(
    problem: &AssignmentProblem,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    beta: f64,
    eta: f64,
) -> Result<f64> {
    problem.check_shape("X", x)?;
    problem.check_shape("Y", y)?;
    problem.check_shape("Lambda", lambda)?;
    if x.iter().any(|&v| !(-NEG_TOL..=1.0 + NEG_TOL).contains(&v)) {
        return Err(Error::Indicator("box constraint 0 <= X <= 1"));
    }
    let rows = y.column_sum();
    let cols = y.row_sum();
    let b = problem.b() as f64;
    let row_gap = rows.iter().fold(0.0_f64, |acc, v| acc.max((v - 1.0).abs()));
    let col_gap = cols.iter().fold(0.0_f64, |acc, v| acc.max((v - b).abs()));
    if row_gap > AFFINE_TOL || col_gap > AFFINE_TOL * b.max(1.0) {
        return Err(Error::Indicator("affine constraints Y 1 = 1, 1^T Y = b 1^T"));
    }
    lagrangian_value(problem.a(), problem.g(), x, y, lambda, beta, eta)
}

pub(crate) fn lagrangian_value(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: &DMatrix<f64>,
    beta: f64,
    eta: f64,
) -> Result<f64> {
    let diff = y - x;
    Ok(0.5 * (a * x).dot(y)
        + g.dot(y)
        + eta * half_quasi_norm(x)?
        + lambda.dot(&diff)
        + 0.5 * beta * diff.norm_squared())
}

/// Penalty levels above which the regularized relaxation behaves like the
/// binary problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaThresholds {
    /// `4 lambda_max(A)`: the regularized objective is strongly concave on the polytope.
    pub concavity: f64,
    /// `4 max_ij |A_ij|`: local and global minima coincide with the binary problem's.
    pub equivalence: f64,
    /// `2/(sqrt 2 - 1) sqrt(n) (||G||_F + sqrt(n) ||A||_F)`: every KKT point is binary.
    pub kkt_binary: f64,
}

pub fn eta_thresholds(problem: &AssignmentProblem) -> EtaThresholds {
    let a = problem.a();
    let lambda_max = SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let entry_max = a.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let sqrt_n = (problem.n() as f64).sqrt();
    let kkt_binary =
        2.0 / (std::f64::consts::SQRT_2 - 1.0) * sqrt_n * (problem.g().norm() + sqrt_n * a.norm());
    EtaThresholds {
        concavity: 4.0 * lambda_max,
        equivalence: 4.0 * entry_max,
        kkt_binary,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    /// `||X 1_m - 1_n||_inf`
    pub row_residual: f64,
    /// `||1_n^T X - b 1_m^T||_inf`
    pub col_residual: f64,
    /// Largest distance of an entry outside `[0, 1]`.
    pub box_violation: f64,
    /// Share of entries strictly inside `(tol, 1 - tol)`.
    pub nonbinary_fraction: f64,
    pub is_assignment: bool,
}

pub fn feasibility(x: &DMatrix<f64>, problem: &AssignmentProblem, tol: f64) -> Result<FeasibilityReport> {
    problem.check_shape("X", x)?;
    let b = problem.b() as f64;
    let row_residual = x
        .column_sum()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max((v - 1.0).abs()));
    let col_residual = x.row_sum().iter().fold(0.0_f64, |acc, v| acc.max((v - b).abs()));
    let box_violation = x
        .iter()
        .fold(0.0_f64, |acc, &v| acc.max(-v).max(v - 1.0).max(0.0));
    let nonbinary_fraction = nonbinary_fraction(x, tol);
    let is_assignment = row_residual <= tol
        && col_residual <= tol
        && box_violation <= tol
        && nonbinary_fraction == 0.0;
    Ok(FeasibilityReport {
        row_residual,
        col_residual,
        box_violation,
        nonbinary_fraction,
        is_assignment,
    })
}

/// Fraction of entries with `tol < X_ij < 1 - tol`.
pub fn nonbinary_fraction(x: &DMatrix<f64>, tol: f64) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let count = x.iter().filter(|&&v| v > tol && v < 1.0 - tol).count();
    count as f64 / x.len() as f64
}

/// Snaps entries within `tol` of 0 or 1 onto the nearer endpoint.
pub fn snap_binary(x: &mut DMatrix<f64>, tol: f64) {
    for v in x.iter_mut() {
        if v.abs() <= tol {
            *v = 0.0;
        } else if (*v - 1.0).abs() <= tol {
            *v = 1.0;
        }
    }
}

/// Greedy capacity-constrained rounding onto the assignment set.
///
/// Entries are visited by value, largest first, ties in row-major order.
/// `(i, j)` is accepted while row `i` is unassigned and column `j` holds
/// fewer than `b` rows. Capacities total `n`, so every row ends up assigned.
pub fn round_to_assignment(x: &DMatrix<f64>, b: usize) -> DMatrix<f64> {
    let (n, m) = x.shape();
    let mut order: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    // stable sort keeps row-major order among equal values
    order.sort_by(|&(i1, j1), &(i2, j2)| x[(i2, j2)].total_cmp(&x[(i1, j1)]));

    let mut out = DMatrix::zeros(n, m);
    let mut row_done = vec![false; n];
    let mut load = vec![0usize; m];
    let mut assigned = 0;
    for (i, j) in order {
        if assigned == n {
            break;
        }
        if !row_done[i] && load[j] < b {
            out[(i, j)] = 1.0;
            row_done[i] = true;
            load[j] += 1;
            assigned += 1;
        }
    }
    out
}
