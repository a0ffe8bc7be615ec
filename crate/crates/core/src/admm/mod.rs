//! ADMM for the `l1/2`-regularized split problem
//!
//! ```text
//! min  1/2 <A, X Y^T> + <G, Y> + eta ||X||_{1/2}^{1/2}
//! s.t. 0 <= X <= 1,  Y in affine set,  Y - X = 0
//! ```
//!
//! Every iteration solves both blocks in closed form: the `X` block
//! entry-wise through [`prox::scalar_prox`], the `Y` block as an orthogonal
//! projection onto the affine set. The multiplier then takes a plain ascent
//! step. The solver is generic over [`SplitModel`] so that the single-column
//! capacity problem reuses the same machinery.

pub mod monitor;
pub mod prox;

use std::io::Write;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, AssignmentProblem};

pub use monitor::{theory_monitors, MonitorReport};
pub use prox::{cubic_largest_root_gt1, cubic_roots_gt1, scalar_prox};

/// A quadratic program whose feasible set splits into a box on `X` and an
/// affine set on `Y`.
pub trait SplitModel {
    /// Symmetric quadratic cost `A`.
    fn quad(&self) -> &DMatrix<f64>;
    /// Linear cost `G`, same shape as `X`.
    fn linear(&self) -> &DMatrix<f64>;
    /// Euclidean projection onto the affine set.
    fn project(&self, b: &DMatrix<f64>) -> DMatrix<f64>;
    /// A binary point of the feasible set close to `x`.
    fn round(&self, x: &DMatrix<f64>) -> DMatrix<f64>;
    /// The barycentre of the feasible polytope.
    fn uniform(&self) -> DMatrix<f64>;

    fn shape(&self) -> (usize, usize) {
        self.linear().shape()
    }

    fn objective(&self, x: &DMatrix<f64>) -> f64 {
        model::quadratic_linear(self.quad(), self.linear(), x)
    }
}

/// Orthogonal projection onto `{Y : Y 1_m = 1_n, 1_n^T Y = b 1_m^T}`:
///
/// `Y = B - (1/n) 1 1^T B + (1/m) (1 - B 1 + (1/n) 1 1^T B 1) 1^T`.
pub fn project_assignment(bmat: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = bmat.shape();
    let (nf, mf) = (n as f64, m as f64);
    let col_means = bmat.row_sum() / nf; // 1 x m
    let row_sums = bmat.column_sum(); // n x 1
    let total = row_sums.sum();
    DMatrix::from_fn(n, m, |i, j| {
        bmat[(i, j)] - col_means[j] + (1.0 - row_sums[i] + total / nf) / mf
    })
}

impl SplitModel for AssignmentProblem {
    fn quad(&self) -> &DMatrix<f64> {
        self.a()
    }

    fn linear(&self) -> &DMatrix<f64> {
        self.g()
    }

    fn project(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        project_assignment(b)
    }

    fn round(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        model::round_to_assignment(x, self.b())
    }

    fn uniform(&self) -> DMatrix<f64> {
        DMatrix::from_element(self.n(), self.m(), 1.0 / self.m() as f64)
    }
}

/// Single-column variant: `min 1/2 x^T A x + g^T x` over `x in [0,1]^p`
/// with `1^T x = b`. Selects one batch of `b` items out of `p`.
#[derive(Debug, Clone)]
pub struct CapacityProblem {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    b: usize,
}

impl CapacityProblem {
    pub fn new(a: DMatrix<f64>, g: DMatrix<f64>, b: usize) -> Result<Self> {
        let p = a.nrows();
        model::check_shape("A", &a, p, p)?;
        model::check_shape("g", &g, p, 1)?;
        if b == 0 || b > p {
            return Err(Error::Config(format!("capacity {b} must lie in 1..={p}")));
        }
        Ok(Self { a, g, b })
    }

    pub fn capacity(&self) -> usize {
        self.b
    }
}

impl SplitModel for CapacityProblem {
    fn quad(&self) -> &DMatrix<f64> {
        &self.a
    }

    fn linear(&self) -> &DMatrix<f64> {
        &self.g
    }

    fn project(&self, bmat: &DMatrix<f64>) -> DMatrix<f64> {
        let p = bmat.nrows() as f64;
        let shift = (self.b as f64 - bmat.sum()) / p;
        bmat.add_scalar(shift)
    }

    /// The `b` largest entries, ties to the lower index.
    fn round(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let p = x.nrows();
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&i, &j| x[(j, 0)].total_cmp(&x[(i, 0)]));
        let mut out = DMatrix::zeros(p, 1);
        for &i in &idx[..self.b] {
            out[(i, 0)] = 1.0;
        }
        out
    }

    fn uniform(&self) -> DMatrix<f64> {
        let p = self.a.nrows();
        DMatrix::from_element(p, 1, self.b as f64 / p as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `X0 = Y0 = barycentre` (every entry `1/m` for assignments).
    Uniform,
    /// `Y0` is the projection of a seeded uniform-random matrix, `X0 = clamp(Y0, 0, 1)`.
    RandomFeasible,
    /// `Y0` is the projection of the given matrix, `X0` its clamp to the box.
    Given(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub beta: f64,
    pub eta: f64,
    pub eps_kkt: f64,
    pub eps_primal: f64,
    pub binary_tol: f64,
    pub max_iter: usize,
    /// Consecutive converged-but-fractional checks before giving up on binariness.
    pub stall_window: usize,
    pub init: Init,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 20.0,
            eta: 1.0,
            eps_kkt: 1e-6,
            eps_primal: 1e-6,
            binary_tol: 1e-9,
            max_iter: 20_000,
            stall_window: 50,
            init: Init::Uniform,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive and finite");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be non-negative and finite");
        }
        if !(self.eps_kkt > 0.0 && self.eps_primal > 0.0) {
            return bad("eps_kkt and eps_primal must be positive");
        }
        if !(0.0..0.5).contains(&self.binary_tol) {
            return bad("binary_tol must lie in [0, 0.5)");
        }
        if self.max_iter == 0 || self.stall_window == 0 {
            return bad("max_iter and stall_window must be at least 1");
        }
        Ok(())
    }

    /// `beta > eta / 4`, the penalty condition for finite termination.
    pub fn finite_termination_ok(&self) -> bool {
        self.beta > self.eta / 4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `||(A/2 - beta I)(Y^k - Y^{k-1})||_F`
    pub h: f64,
    /// `beta ||Y^k - X^k||_F`
    pub p: f64,
    pub lagrangian: f64,
    pub nonbinary_fraction: f64,
    pub lambda_norm: f64,
    pub objective_original: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConvergedBinary,
    ConvergedNonbinary,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub final_x: DMatrix<f64>,
    pub final_y: DMatrix<f64>,
    pub final_lambda: DMatrix<f64>,
    pub termination: Termination,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
    /// Rounded fallback, present unless the run ended binary.
    pub rounded_x: Option<DMatrix<f64>>,
}

impl SolveReport {
    /// The binary answer: the final iterate if it converged binary, else the rounding.
    pub fn assignment(&self) -> &DMatrix<f64> {
        self.rounded_x.as_ref().unwrap_or(&self.final_x)
    }
}

pub fn init_state<P: SplitModel>(problem: &P, config: &SolverConfig) -> Result<IterateState> {
    let (n, m) = problem.shape();
    let (x, y) = match &config.init {
        Init::Uniform => {
            let u = problem.uniform();
            (u.clone(), u)
        }
        Init::RandomFeasible => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let raw = DMatrix::from_fn(n, m, |_, _| rng.random::<f64>());
            let y = problem.project(&raw);
            (y.map(|v| v.clamp(0.0, 1.0)), y)
        }
        Init::Given(x0) => {
            model::check_shape("initial X", x0, n, m)?;
            if x0.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("initial X"));
            }
            (x0.map(|v| v.clamp(0.0, 1.0)), problem.project(x0))
        }
    };
    Ok(IterateState {
        x,
        y,
        lambda: DMatrix::zeros(n, m),
        k: 0,
    })
}

/// `X^k` from `Y^{k-1}, Lambda^{k-1}`: `R = Y + (Lambda - A Y / 2) / beta`, then the
/// scalar prox entry-wise.
pub fn x_update<P: SplitModel>(state: &IterateState, problem: &P, config: &SolverConfig) -> DMatrix<f64> {
    let ay = problem.quad() * &state.y;
    x_from_ay(state, &ay, config)
}

fn x_from_ay(state: &IterateState, ay: &DMatrix<f64>, config: &SolverConfig) -> DMatrix<f64> {
    let inv_beta = 1.0 / config.beta;
    let mut x = state.y.clone();
    for ((xv, &lv), &ayv) in x.iter_mut().zip(state.lambda.iter()).zip(ay.iter()) {
        let r = *xv + inv_beta * (lv - 0.5 * ayv);
        *xv = scalar_prox(r, config.beta, config.eta);
    }
    x
}

/// `Y^k` from `X^k` (held in `state.x`) and `Lambda^{k-1}`: projection of
/// `B = X - (Lambda + A X / 2 + G) / beta`.
pub fn y_update<P: SplitModel>(state: &IterateState, problem: &P, config: &SolverConfig) -> DMatrix<f64> {
    let ax = problem.quad() * &state.x;
    y_from_ax(state, &ax, problem, config)
}

fn y_from_ax<P: SplitModel>(
    state: &IterateState,
    ax: &DMatrix<f64>,
    problem: &P,
    config: &SolverConfig,
) -> DMatrix<f64> {
    let inv_beta = 1.0 / config.beta;
    let mut bmat = state.x.clone();
    for (((bv, &lv), &axv), &gv) in bmat
        .iter_mut()
        .zip(state.lambda.iter())
        .zip(ax.iter())
        .zip(problem.linear().iter())
    {
        *bv -= inv_beta * (lv + 0.5 * axv + gv);
    }
    problem.project(&bmat)
}

/// `Lambda + beta (Y - X)`.
pub fn dual_update(state: &IterateState, beta: f64) -> DMatrix<f64> {
    let mut lambda = state.lambda.clone();
    for ((l, &y), &x) in lambda.iter_mut().zip(state.y.iter()).zip(state.x.iter()) {
        *l += beta * (y - x);
    }
    lambda
}

/// `(h, p)` for the iterate in `state` given the previous `Y`.
pub fn residuals<P: SplitModel>(
    prev_y: &DMatrix<f64>,
    state: &IterateState,
    problem: &P,
    beta: f64,
) -> (f64, f64) {
    let dy = &state.y - prev_y;
    let h = (problem.quad() * &dy * 0.5 - &dy * beta).norm();
    let p = beta * (&state.y - &state.x).norm();
    (h, p)
}

fn check_finite(x: &DMatrix<f64>, stage: &'static str) -> Result<()> {
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::NumericalBreakdown(stage));
    }
    Ok(())
}

/// One pass of X-update, Y-update and dual update, with its trace record.
pub fn step<P: SplitModel>(
    state: &IterateState,
    problem: &P,
    config: &SolverConfig,
) -> Result<(IterateState, IterationRecord)> {
    let a = problem.quad();
    let ay_prev = a * &state.y;
    let x = x_from_ay(state, &ay_prev, config);
    check_finite(&x, "x_update")?;

    let mut next = IterateState {
        x,
        y: DMatrix::zeros(0, 0),
        lambda: state.lambda.clone(),
        k: state.k + 1,
    };
    let ax = a * &next.x;
    next.y = y_from_ax(&next, &ax, problem, config);
    check_finite(&next.y, "y_update")?;
    next.lambda = dual_update(&next, config.beta);
    check_finite(&next.lambda, "dual_update")?;

    // A(Y^k - Y^{k-1}) = A Y^k - A Y^{k-1}
    let ay = a * &next.y;
    let dy = &next.y - &state.y;
    let h = ((&ay - &ay_prev) * 0.5 - &dy * config.beta).norm();
    let diff = &next.y - &next.x;
    let p = config.beta * diff.norm();

    let g = problem.linear();
    let lagrangian = 0.5 * ax.dot(&next.y)
        + g.dot(&next.y)
        + config.eta * next.x.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>()
        + next.lambda.dot(&diff)
        + 0.5 * config.beta * diff.norm_squared();
    let record = IterationRecord {
        k: next.k,
        h,
        p,
        lagrangian,
        nonbinary_fraction: model::nonbinary_fraction(&next.x, config.binary_tol),
        lambda_norm: next.lambda.norm(),
        objective_original: 0.5 * ax.dot(&next.x) + g.dot(&next.x),
    };
    Ok((next, record))
}

/// Runs ADMM from [`init_state`] until binary convergence, a fractional stall
/// or `max_iter`.
pub fn solve<P: SplitModel>(problem: &P, config: &SolverConfig) -> Result<SolveReport> {
    let state = init_state(problem, config)?;
    solve_from(problem, config, state)
}

pub fn solve_from<P: SplitModel>(
    problem: &P,
    config: &SolverConfig,
    mut state: IterateState,
) -> Result<SolveReport> {
    config.validate()?;
    if !config.finite_termination_ok() {
        warn!(
            "beta = {} <= eta/4 = {}: finite termination is not guaranteed",
            config.beta,
            config.eta / 4.0
        );
    }

    let mut trace = Vec::new();
    let mut stall = 0usize;
    let mut termination = Termination::MaxIter;
    for _ in 0..config.max_iter {
        let (next, rec) = step(&state, problem, config)?;
        state = next;
        trace.push(rec);
        if rec.h <= config.eps_kkt && rec.p <= config.eps_primal {
            if rec.nonbinary_fraction == 0.0 {
                termination = Termination::ConvergedBinary;
                break;
            }
            stall += 1;
            if stall >= config.stall_window {
                termination = Termination::ConvergedNonbinary;
                break;
            }
        } else {
            stall = 0;
        }
    }
    debug!("ADMM stopped after {} iterations: {:?}", state.k, termination);

    let mut final_x = state.x;
    model::snap_binary(&mut final_x, config.binary_tol);
    let rounded_x = match termination {
        Termination::ConvergedBinary => None,
        _ => Some(problem.round(&final_x)),
    };
    Ok(SolveReport {
        final_x,
        final_y: state.y,
        final_lambda: state.lambda,
        termination,
        iterations: state.k,
        trace,
        rounded_x,
    })
}

/// Writes the trace as CSV, one row per iteration, 17 significant digits.
pub fn write_trace_csv<W: Write>(trace: &[IterationRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "h", "p", "lagrangian", "nonbinary_fraction", "lambda_norm", "objective"])?;
    for r in trace {
        let f = |v: f64| format!("{v:.16e}");
        w.write_record([
            r.k.to_string(),
            f(r.h),
            f(r.p),
            f(r.lagrangian),
            f(r.nonbinary_fraction),
            f(r.lambda_norm),
            f(r.objective_original),
        ])?;
    }
    w.flush()?;
    Ok(())
}
