//! Mini-batch selection by maximum mean discrepancy.
//!
//! With a Gaussian Gram matrix `Psi` the mean squared MMD between each batch
//! and the full set is a quadratic in the assignment matrix `M`:
//!
//! ```text
//! (1/m) sum_j [ (1/b^2) M_j^T Psi M_j - (2/(n b)) M_j^T Psi 1 + (1/n^2) 1^T Psi 1 ]
//! ```
//!
//! so batch selection is an instance of the assignment QP with
//! `A = Psi / b^2` and `G = -(2/(n b)) Psi 1 1^T`.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{self, CapacityProblem, Init, SolveReport, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{self, AssignmentProblem};
use crate::oracle;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DVector<f64>>,
    d: usize,
}

impl Dataset {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        let d = points.first().map_or(0, |p| p.len());
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::Parse(format!("sample {i} has {} features, expected {d}", p.len())));
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset"));
            }
        }
        Ok(Self { points, d })
    }

    /// One sample per row, comma separated. A leading non-numeric row is
    /// taken as a header and skipped.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut points = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            match parsed {
                Ok(v) => points.push(DVector::from_vec(v)),
                Err(_) if line == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", line + 1))),
            }
        }
        Self::new(points)
    }

    pub fn n(&self) -> usize {
        self.points.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub psi: DMatrix<f64>,
    pub bandwidth_sigma: f64,
}

impl KernelMatrix {
    /// Wraps a precomputed Gram matrix after checking symmetry and a unit diagonal.
    pub fn from_gram(psi: DMatrix<f64>, bandwidth_sigma: f64) -> Result<Self> {
        if !psi.is_square() {
            return Err(Error::Dimension {
                what: "Psi",
                got_rows: psi.nrows(),
                got_cols: psi.ncols(),
                want_rows: psi.nrows(),
                want_cols: psi.nrows(),
            });
        }
        let gap = (&psi - psi.transpose()).amax();
        if gap > 1e-12 {
            return Err(Error::Asymmetric { gap, tol: 1e-12 });
        }
        if psi.diagonal().iter().any(|&v| (v - 1.0).abs() > 1e-12) {
            return Err(Error::Config("kernel diagonal must be 1".into()));
        }
        Ok(Self { psi, bandwidth_sigma })
    }

    pub fn n(&self) -> usize {
        self.psi.nrows()
    }
}

fn pairwise_sq_distances(data: &Dataset) -> DMatrix<f64> {
    let n = data.n();
    let pts = data.points();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|k| (&pts[i] - &pts[k]).norm_squared()).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, k| rows[i][k])
}

/// Median of the pairwise Euclidean distances over `i < k`.
pub fn median_heuristic(data: &Dataset) -> f64 {
    let d2 = pairwise_sq_distances(data);
    median_from_sq(&d2)
}

fn median_from_sq(d2: &DMatrix<f64>) -> f64 {
    let n = d2.nrows();
    let mut dist: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |k| (i, k)))
        .map(|(i, k)| d2[(i, k)].sqrt())
        .collect();
    if dist.is_empty() {
        return 0.0;
    }
    dist.sort_by(f64::total_cmp);
    let mid = dist.len() / 2;
    if dist.len() % 2 == 1 {
        dist[mid]
    } else {
        0.5 * (dist[mid - 1] + dist[mid])
    }
}

/// `Psi_ik = exp(-||x_i - x_k||^2 / (2 sigma^2))`.
pub fn gaussian_kernel(data: &Dataset, sigma: Option<f64>) -> Result<KernelMatrix> {
    if data.n() < 2 {
        return Err(Error::Config(format!("kernel needs at least 2 samples, got {}", data.n())));
    }
    let d2 = pairwise_sq_distances(data);
    let sigma = match sigma {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(Error::Config(format!("bandwidth must be positive, got {s}"))),
        None => {
            let med = median_from_sq(&d2);
            if med > 0.0 {
                med
            } else {
                warn!("all pairwise distances vanish; using bandwidth 1.0");
                1.0
            }
        }
    };
    let scale = 1.0 / (2.0 * sigma * sigma);
    let psi = d2.map(|v| (-v * scale).exp());
    Ok(KernelMatrix {
        psi,
        bandwidth_sigma: sigma,
    })
}

/// Returns the solver instance and the additive constant `c` with
/// `mmd(M) = (1/m) (2 f(M) + m c)`, `f` the original objective.
///
/// For row-stochastic `M` the linear term sums to `-(2/(n b)) 1^T Psi 1`
/// regardless of `M`, so `c` absorbs that share besides the trace constant:
/// `c = 3 (1/n^2) 1^T Psi 1`.
pub fn build_mmd_problem(kernel: &KernelMatrix, m: usize) -> Result<(AssignmentProblem, f64)> {
    let n = kernel.n();
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::Divisibility { n, m });
    }
    let b = (n / m) as f64;
    let nf = n as f64;
    let a = &kernel.psi / (b * b);
    let row_sums = kernel.psi.column_sum();
    let g = DMatrix::from_fn(n, m, |i, _| -2.0 / (nf * b) * row_sums[i]);
    let total = kernel.psi.sum();
    let problem = AssignmentProblem::new(a, g, m)?;
    Ok((problem, 3.0 * total / (nf * nf)))
}

/// Mean over batches of the squared MMD between batch and full set.
pub fn mmd_objective(x: &DMatrix<f64>, kernel: &KernelMatrix, b: usize) -> Result<f64> {
    let n = kernel.n();
    if b == 0 || !n.is_multiple_of(b) {
        return Err(Error::Divisibility { n, m: b });
    }
    let m = n / b;
    model::check_shape("M", x, n, m)?;
    let rows_ok = x.row_iter().all(|r| r.sum() == 1.0);
    let cols_ok = x.column_iter().all(|c| c.sum() == b as f64);
    if !rows_ok || !cols_ok || x.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Infeasible("M is not a balanced assignment".into()));
    }
    let (nf, bf) = (n as f64, b as f64);
    let psi = &kernel.psi;
    let psi_m = psi * x;
    let psi_1 = psi.column_sum();
    let total = psi.sum();
    let mut acc = 0.0;
    for j in 0..m {
        let col = x.column(j);
        acc += col.dot(&psi_m.column(j)) / (bf * bf) - 2.0 / (nf * bf) * col.dot(&psi_1) + total / (nf * nf);
    }
    Ok(acc / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Vector,
    Matrix,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Random, Strategy::Vector, Strategy::Matrix];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Vector => "vector",
            Strategy::Matrix => "matrix",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(Strategy::Random),
            "vector" => Ok(Strategy::Vector),
            "matrix" => Ok(Strategy::Matrix),
            other => Err(Error::Parse(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchPlan {
    pub strategy: Strategy,
    pub batches: Vec<Vec<usize>>,
    pub mmd: f64,
    #[serde(skip)]
    pub assignment: DMatrix<f64>,
}

impl BatchPlan {
    fn from_assignment(strategy: Strategy, assignment: DMatrix<f64>, kernel: &KernelMatrix) -> Result<Self> {
        let b = assignment.nrows() / assignment.ncols();
        let mmd = mmd_objective(&assignment, kernel, b)?;
        Ok(Self {
            strategy,
            batches: batches_of(&assignment),
            mmd,
            assignment,
        })
    }

    fn from_batches(strategy: Strategy, batches: Vec<Vec<usize>>, kernel: &KernelMatrix) -> Result<Self> {
        let n = kernel.n();
        let mut x = DMatrix::zeros(n, batches.len());
        for (j, batch) in batches.iter().enumerate() {
            for &i in batch {
                x[(i, j)] = 1.0;
            }
        }
        Self::from_assignment(strategy, x, kernel)
    }
}

/// Row indices of each column's ones, ascending.
pub fn batches_of(x: &DMatrix<f64>) -> Vec<Vec<usize>> {
    x.column_iter()
        .map(|c| c.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect())
        .collect()
}

pub fn select_batches_matrix(kernel: &KernelMatrix, m: usize, config: &SolverConfig) -> Result<BatchPlan> {
    select_batches_matrix_report(kernel, m, config).map(|(plan, _)| plan)
}

/// Matrix strategy together with the underlying solver report.
///
/// All columns of `G` coincide, so the uniform start is invariant under
/// column permutations and the iterates never leave it. A uniform `init` is
/// therefore replaced by a seeded random feasible start.
pub fn select_batches_matrix_report(
    kernel: &KernelMatrix,
    m: usize,
    config: &SolverConfig,
) -> Result<(BatchPlan, SolveReport)> {
    let (problem, _) = build_mmd_problem(kernel, m)?;
    let mut config = config.clone();
    if matches!(config.init, Init::Uniform) {
        config.init = Init::RandomFeasible;
    }
    let report = admm::solve(&problem, &config)?;
    let plan = BatchPlan::from_assignment(Strategy::Matrix, report.assignment().clone(), kernel)?;
    Ok((plan, report))
}

/// Greedy one-batch-at-a-time selection on a shrinking pool.
///
/// Each step solves the single-column relaxation of the one-batch MMD against
/// the remaining pool's empirical distribution and removes the chosen `b`
/// items. The last `b` items form the final batch.
pub fn select_batches_vector(kernel: &KernelMatrix, m: usize, config: &SolverConfig) -> Result<BatchPlan> {
    let n = kernel.n();
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::Divisibility { n, m });
    }
    let b = n / m;
    let bf = b as f64;
    let mut pool: Vec<usize> = (0..n).collect();
    let mut batches = Vec::with_capacity(m);
    while pool.len() > b {
        let p = pool.len();
        let sub = DMatrix::from_fn(p, p, |r, c| kernel.psi[(pool[r], pool[c])]);
        let sums = sub.column_sum();
        let g = DMatrix::from_fn(p, 1, |r, _| -2.0 / (p as f64 * bf) * sums[r]);
        let problem = CapacityProblem::new(sub / (bf * bf), g, b)?;
        let report = admm::solve(&problem, config)?;
        let x = report.assignment();
        let (chosen, rest): (Vec<usize>, Vec<usize>) = (0..p).partition(|&r| x[(r, 0)] == 1.0);
        debug_assert_eq!(chosen.len(), b);
        batches.push(chosen.iter().map(|&r| pool[r]).collect());
        pool = rest.iter().map(|&r| pool[r]).collect();
    }
    batches.push(pool);
    BatchPlan::from_batches(Strategy::Vector, batches, kernel)
}

/// Seeded uniform permutation of `0..n`, chunked into `m` batches of `b`.
pub fn random_batches(n: usize, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 || !n.is_multiple_of(m) {
        return Err(Error::Divisibility { n, m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(random_batches_with(n, m, &mut rng))
}

pub(crate) fn random_batches_with<R: rand::Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(n / m)
        .map(|c| {
            let mut c = c.to_vec();
            c.sort_unstable();
            c
        })
        .collect()
}

pub fn select_batches_random(kernel: &KernelMatrix, m: usize, seed: u64) -> Result<BatchPlan> {
    let batches = random_batches(kernel.n(), m, seed)?;
    BatchPlan::from_batches(Strategy::Random, batches, kernel)
}

pub fn select_batches(
    strategy: Strategy,
    kernel: &KernelMatrix,
    m: usize,
    config: &SolverConfig,
    seed: u64,
) -> Result<BatchPlan> {
    match strategy {
        Strategy::Random => select_batches_random(kernel, m, seed),
        Strategy::Vector => select_batches_vector(kernel, m, config),
        Strategy::Matrix => select_batches_matrix(kernel, m, config),
    }
}

/// Exhaustive MMD minimum over all balanced plans; small `n` only.
pub fn brute_force_plan(kernel: &KernelMatrix, m: usize) -> Result<(DMatrix<f64>, f64)> {
    let (problem, _) = build_mmd_problem(kernel, m)?;
    let (x, _) = oracle::brute_force_solve(&problem)?;
    let v = mmd_objective(&x, kernel, problem.b())?;
    Ok((x, v))
}
