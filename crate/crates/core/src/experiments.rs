//! Synthetic optimizer benchmark: a sum of grouped strongly convex
//! quadratics with a closed-form optimum, trained with mini-batches drawn
//! by each selection strategy.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::SolverConfig;
use crate::error::{Error, Result};
use crate::mmd::{self, random_batches_with, Dataset, Strategy};

pub const DEFAULT_CHECKPOINTS: [usize; 4] = [100, 200, 300, 400];
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// `N_i` for each of the `K` groups.
    pub group_sizes: Vec<usize>,
    pub dim: usize,
    pub seed: u64,
    /// Eigenvalue range of every `Q_ij`.
    pub conditioning: (f64, f64),
    /// Standard deviation of the group centres of the per-sample minimizers.
    pub centre_scale: f64,
    /// Within-group standard deviation of the per-sample minimizers.
    pub noise_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            group_sizes: vec![20; 4],
            dim: 5,
            seed: 0,
            conditioning: (0.5, 2.0),
            centre_scale: 3.0,
            noise_scale: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn k(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn n(&self) -> usize {
        self.group_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_sizes.is_empty() || self.group_sizes.contains(&0) {
            return Err(Error::Config("every group needs at least one sample".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        let (lo, hi) = self.conditioning;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("conditioning range ({lo}, {hi}) must satisfy 0 < lo <= hi")));
        }
        if !(self.centre_scale >= 0.0 && self.noise_scale >= 0.0) {
            return Err(Error::Config("scales must be non-negative".into()));
        }
        Ok(())
    }
}

/// `f(x) = sum_s (1/2 x^T Q_s x + g_s^T x)` over all samples `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInstance {
    pub q: Vec<DMatrix<f64>>,
    pub g: Vec<DVector<f64>>,
    /// Group index of each sample.
    pub group: Vec<usize>,
    pub q_sum: DMatrix<f64>,
    pub g_sum: DVector<f64>,
    pub x_star: DVector<f64>,
    pub f_star: f64,
}

impl QuadraticInstance {
    pub fn from_parts(q: Vec<DMatrix<f64>>, g: Vec<DVector<f64>>, group: Vec<usize>) -> Result<Self> {
        let n = q.len();
        if n == 0 || g.len() != n || group.len() != n {
            return Err(Error::Config("need matching, non-empty Q, g and group lists".into()));
        }
        let d = g[0].len();
        if q.iter().any(|m| m.nrows() != d || m.ncols() != d) || g.iter().any(|v| v.len() != d) {
            return Err(Error::Config(format!("all Q must be {d}x{d} and all g of length {d}")));
        }
        let q_sum = q.iter().fold(DMatrix::zeros(d, d), |acc, m| acc + m);
        let g_sum = g.iter().fold(DVector::zeros(d), |acc, v| acc + v);
        let x_star = q_sum
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("sum of Q is not positive definite".into()))?
            .solve(&(-&g_sum));
        let f_star = 0.5 * x_star.dot(&(&q_sum * &x_star)) + g_sum.dot(&x_star);
        Ok(Self {
            q,
            g,
            group,
            q_sum,
            g_sum,
            x_star,
            f_star,
        })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q_sum * x)) + self.g_sum.dot(x)
    }

    /// Mean per-sample gradient `(1/n) sum_s (Q_s x + g_s)`.
    pub fn full_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (&self.q_sum * x + &self.g_sum) / self.n() as f64
    }

    /// `(1/|B|) sum_{s in B} (Q_s x + g_s)`.
    pub fn batch_gradient(&self, x: &DVector<f64>, batch: &[usize]) -> DVector<f64> {
        let mut grad = DVector::zeros(self.dim());
        for &s in batch {
            grad += &self.q[s] * x + &self.g[s];
        }
        grad / batch.len() as f64
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let raw = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let qr = raw.qr();
    let (q, r) = (qr.q(), qr.r());
    // sign fix so the distribution is Haar
    let signs = DMatrix::from_diagonal(&r.diagonal().map(|v| if v < 0.0 { -1.0 } else { 1.0 }));
    q * signs
}

/// Seeded instance: `Q_s = U diag(lambda) U^T` with a random orthogonal `U`
/// and `lambda` uniform in the conditioning range, and `g_s = -Q_s z_s` where
/// `z_s` is the group centre plus Gaussian noise, so each sample's own
/// minimizer is `z_s`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<QuadraticInstance> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let (lo, hi) = spec.conditioning;
    let eig = Uniform::new_inclusive(lo, hi).map_err(|e| Error::Config(e.to_string()))?;
    let centres: Vec<DVector<f64>> = (0..spec.k())
        .map(|_| DVector::from_fn(d, |_, _| spec.centre_scale * normal(&mut rng)))
        .collect();
    let (mut qs, mut gs, mut group) = (Vec::new(), Vec::new(), Vec::new());
    for (k, &size) in spec.group_sizes.iter().enumerate() {
        for _ in 0..size {
            let u = random_orthogonal(d, &mut rng);
            let lam = DVector::from_fn(d, |_, _| eig.sample(&mut rng));
            let q = &u * DMatrix::from_diagonal(&lam) * u.transpose();
            let q = (&q + q.transpose()) * 0.5;
            let z = &centres[k] + DVector::from_fn(d, |_, _| spec.noise_scale * normal(&mut rng));
            gs.push(-(&q * z));
            qs.push(q);
            group.push(k);
        }
    }
    QuadraticInstance::from_parts(qs, gs, group)
}

/// Per-sample minimizers `-Q_s^{-1} g_s`, in sample order.
pub fn kernel_features(instance: &QuadraticInstance) -> Result<Dataset> {
    let points = instance
        .q
        .iter()
        .zip(&instance.g)
        .map(|(q, g)| {
            q.clone()
                .cholesky()
                .map(|c| c.solve(&(-g)))
                .ok_or_else(|| Error::Config("Q is not positive definite".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    MomentumSgd,
    Adam,
}

impl Optimizer {
    pub const ALL: [Optimizer; 3] = [Optimizer::Sgd, Optimizer::MomentumSgd, Optimizer::Adam];

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::MomentumSgd => "momentum_sgd",
            Optimizer::Adam => "adam",
        }
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Optimizer::Sgd | Optimizer::MomentumSgd => 0.05,
            Optimizer::Adam => 1e-3,
        }
    }
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "momentum_sgd" | "momentum" => Ok(Optimizer::MomentumSgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Parse(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Classical momentum coefficient.
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(optimizer: Optimizer) -> Self {
        Self {
            optimizer,
            learning_rate: optimizer.default_learning_rate(),
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 400,
            batch_size: 4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Where each epoch's batches come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanSource {
    /// The same partition every epoch, traversed in order.
    Fixed(Vec<Vec<usize>>),
    /// A fresh uniform partition every epoch, seeded by the training seed.
    Reshuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// `||x - x*||^2` after every step.
    pub step_err_x: Vec<f64>,
    /// `(f(x) - f*)^2` after every step.
    pub step_err_f: Vec<f64>,
    /// Values at the end of each completed epoch.
    pub epoch_err_x: Vec<f64>,
    pub epoch_err_f: Vec<f64>,
    pub steps_per_epoch: usize,
    pub diverged: bool,
    pub final_log10_err_x: f64,
    pub final_log10_err_f: f64,
}

impl RunMetrics {
    /// `log10` of the epoch-end error at `epoch` (1-based); after a divergence
    /// stop the last recorded value is carried forward.
    pub fn log10_at(&self, epoch: usize, metric: Metric) -> Option<f64> {
        let series = match metric {
            Metric::ErrX => &self.epoch_err_x,
            Metric::ErrF => &self.epoch_err_f,
        };
        if epoch == 0 || series.is_empty() {
            return None;
        }
        Some(safe_log10(series[(epoch - 1).min(series.len() - 1)]))
    }

    /// CSV with columns `step,epoch,err_x,err_f`; steps and epochs are 1-based.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "epoch", "err_x", "err_f"])?;
        for (s, (ex, ef)) in self.step_err_x.iter().zip(&self.step_err_f).enumerate() {
            let epoch = s / self.steps_per_epoch + 1;
            w.write_record([
                (s + 1).to_string(),
                epoch.to_string(),
                format!("{ex:.16e}"),
                format!("{ef:.16e}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn safe_log10(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE).log10()
}

struct OptimizerState {
    velocity: DVector<f64>,
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl OptimizerState {
    fn new(d: usize) -> Self {
        Self {
            velocity: DVector::zeros(d),
            m: DVector::zeros(d),
            v: DVector::zeros(d),
            t: 0,
        }
    }

    fn apply(&mut self, x: &mut DVector<f64>, grad: &DVector<f64>, cfg: &TrainConfig) {
        let lr = cfg.learning_rate;
        match cfg.optimizer {
            Optimizer::Sgd => x.axpy(-lr, grad, 1.0),
            Optimizer::MomentumSgd => {
                self.velocity = &self.velocity * cfg.momentum + grad;
                x.axpy(-lr, &self.velocity, 1.0);
            }
            Optimizer::Adam => {
                self.t += 1;
                let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
                self.m = &self.m * b1 + grad * (1.0 - b1);
                self.v = &self.v * b2 + grad.component_mul(grad) * (1.0 - b2);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for i in 0..x.len() {
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    x[i] -= lr * mh / (vh.sqrt() + cfg.adam_eps);
                }
            }
        }
    }
}

/// Trains from `x = 0` for `cfg.epochs` epochs, one step per batch.
pub fn run_training(instance: &QuadraticInstance, plan: &PlanSource, cfg: &TrainConfig) -> Result<RunMetrics> {
    run_training_from(instance, plan, cfg, DVector::zeros(instance.dim()))
}

pub fn run_training_from(
    instance: &QuadraticInstance,
    plan: &PlanSource,
    cfg: &TrainConfig,
    mut x: DVector<f64>,
) -> Result<RunMetrics> {
    cfg.validate()?;
    let n = instance.n();
    if !n.is_multiple_of(cfg.batch_size) {
        return Err(Error::Divisibility { n, m: cfg.batch_size });
    }
    let m = n / cfg.batch_size;
    if let PlanSource::Fixed(batches) = plan {
        let mut seen = vec![false; n];
        let ok = batches.len() == m
            && batches.iter().all(|b| b.len() == cfg.batch_size)
            && batches.iter().flatten().all(|&s| s < n && !std::mem::replace(&mut seen[s], true));
        if !ok {
            return Err(Error::Config(format!("plan must partition {n} samples into {m} batches of {}", cfg.batch_size)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::new(instance.dim());
    let mut metrics = RunMetrics {
        step_err_x: Vec::with_capacity(cfg.epochs * m),
        step_err_f: Vec::with_capacity(cfg.epochs * m),
        epoch_err_x: Vec::with_capacity(cfg.epochs),
        epoch_err_f: Vec::with_capacity(cfg.epochs),
        steps_per_epoch: m,
        diverged: false,
        final_log10_err_x: 0.0,
        final_log10_err_f: 0.0,
    };

    'epochs: for _ in 0..cfg.epochs {
        let reshuffled;
        let batches = match plan {
            PlanSource::Fixed(b) => b,
            PlanSource::Reshuffled => {
                reshuffled = random_batches_with(n, m, &mut rng);
                &reshuffled
            }
        };
        for batch in batches {
            let grad = instance.batch_gradient(&x, batch);
            state.apply(&mut x, &grad, cfg);
            let ex = (&x - &instance.x_star).norm_squared();
            let df = instance.objective(&x) - instance.f_star;
            let ef = df * df;
            metrics.step_err_x.push(ex);
            metrics.step_err_f.push(ef);
            if ef.is_nan() || ef > DIVERGENCE_LIMIT {
                metrics.diverged = true;
                metrics.epoch_err_x.push(ex);
                metrics.epoch_err_f.push(ef);
                break 'epochs;
            }
        }
        metrics.epoch_err_x.push(*metrics.step_err_x.last().expect("at least one batch"));
        metrics.epoch_err_f.push(*metrics.step_err_f.last().expect("at least one batch"));
    }
    metrics.final_log10_err_x = safe_log10(*metrics.step_err_x.last().unwrap_or(&0.0));
    metrics.final_log10_err_f = safe_log10(*metrics.step_err_f.last().unwrap_or(&0.0));
    Ok(metrics)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ErrX,
    ErrF,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::ErrX => "err_x",
            Metric::ErrF => "err_f",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub optimizer: Optimizer,
    pub metric: Metric,
    /// Seed-averaged `log10` error at each checkpoint.
    pub mean_log10: Vec<f64>,
    pub diverged_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub checkpoints: Vec<usize>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn get(&self, strategy: Strategy, optimizer: Optimizer, metric: Metric) -> Option<&[f64]> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.optimizer == optimizer && r.metric == metric)
            .map(|r| r.mean_log10.as_slice())
    }

    /// One row per optimizer, metric and checkpoint; one column per strategy.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut strategies: Vec<Strategy> = Vec::new();
        let mut optimizers: Vec<Optimizer> = Vec::new();
        for r in &self.rows {
            if !strategies.contains(&r.strategy) {
                strategies.push(r.strategy);
            }
            if !optimizers.contains(&r.optimizer) {
                optimizers.push(r.optimizer);
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["optimizer".to_string(), "metric".into(), "epoch".into()];
        header.extend(strategies.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for &opt in &optimizers {
            for metric in [Metric::ErrX, Metric::ErrF] {
                for (c, epoch) in self.checkpoints.iter().enumerate() {
                    let mut rec = vec![opt.name().to_string(), metric.name().into(), epoch.to_string()];
                    for &s in &strategies {
                        rec.push(self.get(s, opt, metric).map_or(String::new(), |v| format!("{:.6}", v[c])));
                    }
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub optimizer: Optimizer,
    pub seed_index: usize,
    pub metrics: RunMetrics,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub table: SummaryTable,
    pub runs: Vec<RunRecord>,
}

/// Batches for one strategy on one instance. Matrix and vector plans are
/// selected once from the Gaussian kernel of the per-sample minimizers.
pub fn plan_for(
    strategy: Strategy,
    instance: &QuadraticInstance,
    batch_size: usize,
    solver: &SolverConfig,
) -> Result<PlanSource> {
    let n = instance.n();
    if batch_size == 0 || !n.is_multiple_of(batch_size) {
        return Err(Error::Divisibility { n, m: batch_size });
    }
    let m = n / batch_size;
    match strategy {
        Strategy::Random => Ok(PlanSource::Reshuffled),
        Strategy::Vector | Strategy::Matrix => {
            let kernel = mmd::gaussian_kernel(&kernel_features(instance)?, None)?;
            let plan = mmd::select_batches(strategy, &kernel, m, solver, solver.seed)?;
            Ok(PlanSource::Fixed(plan.batches))
        }
    }
}

/// Seed-averaged comparison of strategies and optimizers.
///
/// Seed index `s` uses the instance generated with `spec.seed + s` and
/// training seed `train.seed + s`. Runs execute in parallel; results are
/// collected in a fixed order, so the output does not depend on scheduling.
pub fn compare_strategies(
    spec: &SyntheticSpec,
    strategies: &[Strategy],
    trains: &[TrainConfig],
    seeds: usize,
    checkpoints: &[usize],
    solver: &SolverConfig,
) -> Result<Comparison> {
    if seeds == 0 || trains.is_empty() || strategies.is_empty() {
        return Err(Error::Config("need at least one seed, optimizer and strategy".into()));
    }
    let batch_size = trains[0].batch_size;
    if trains.iter().any(|t| t.batch_size != batch_size) {
        return Err(Error::Config("all optimizers must share the batch size".into()));
    }
    let instances: Vec<QuadraticInstance> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            generate_synthetic(&SyntheticSpec {
                seed: spec.seed.wrapping_add(s as u64),
                ..spec.clone()
            })
        })
        .collect::<Result<_>>()?;

    let plan_jobs: Vec<(usize, Strategy)> = (0..seeds).flat_map(|s| strategies.iter().map(move |&st| (s, st))).collect();
    let plans: Vec<PlanSource> = plan_jobs
        .par_iter()
        .map(|&(s, st)| plan_for(st, &instances[s], batch_size, solver))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..plan_jobs.len())
        .flat_map(|p| {
            let s = plan_jobs[p].0;
            (0..trains.len()).map(move |t| (p, t, s))
        })
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(p, t, s)| {
            let train = TrainConfig {
                seed: trains[t].seed.wrapping_add(s as u64),
                ..trains[t].clone()
            };
            let metrics = run_training(&instances[s], &plans[p], &train)?;
            Ok(RunRecord {
                strategy: plan_jobs[p].1,
                optimizer: trains[t].optimizer,
                seed_index: s,
                metrics,
            })
        })
        .collect::<Result<_>>()?;

    let checkpoints: Vec<usize> = checkpoints.to_vec();
    let mut rows = Vec::new();
    for &strategy in strategies {
        for train in trains {
            if rows.iter().any(|r: &SummaryRow| r.strategy == strategy && r.optimizer == train.optimizer) {
                continue;
            }
            let mine: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.strategy == strategy && r.optimizer == train.optimizer)
                .collect();
            // duplicated strategies in the list produce identical runs; average one copy
            let per_seed: Vec<&RunRecord> = (0..seeds)
                .filter_map(|s| mine.iter().find(|r| r.seed_index == s).copied())
                .collect();
            let diverged_runs = per_seed.iter().filter(|r| r.metrics.diverged).count();
            for metric in [Metric::ErrX, Metric::ErrF] {
                let mean_log10 = checkpoints
                    .iter()
                    .map(|&c| {
                        per_seed.iter().filter_map(|r| r.metrics.log10_at(c, metric)).sum::<f64>() / per_seed.len() as f64
                    })
                    .collect();
                rows.push(SummaryRow {
                    strategy,
                    optimizer: train.optimizer,
                    metric,
                    mean_log10,
                    diverged_runs,
                });
            }
        }
    }
    Ok(Comparison {
        table: SummaryTable { checkpoints, rows },
        runs,
    })
}
