//! `assignqp`: solve, verify and benchmark balanced-assignment quadratic programs.
//!
//! Exit codes: 0 converged binary (or success), 1 input or configuration
//! error, 2 converged to a fractional point, 3 iteration cap reached,
//! 4 problem too large to enumerate.

mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use assignqp_core::admm::{self, Init, SolverConfig, Termination};
use assignqp_core::experiments::{self, Optimizer, SyntheticSpec, TrainConfig};
use assignqp_core::mmd::{self, BatchPlan, Dataset, Strategy};
use assignqp_core::model::{self, AssignmentProblem, EtaThresholds, FeasibilityReport};
use assignqp_core::oracle::{self, OracleExport};
use assignqp_core::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use manifest::{ManifestBuilder, OutDir};

const DEFAULT_ETA_SOLVE: f64 = 1.0;
const DEFAULT_ETA_MMD: f64 = 0.3;
const DEFAULT_ETA_BENCH: f64 = 0.03;

#[derive(Parser)]
#[command(name = "assignqp", version, about = "Quadratic programs over balanced assignment matrices")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// ADMM penalty parameter.
    #[arg(long, global = true, default_value_t = 20.0)]
    beta: f64,
    /// l1/2 weight [default: 1 for solve, 0.3 for mmd-select, 0.03 for synth-bench plans].
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true, default_value_t = 1e-6)]
    eps_kkt: f64,
    #[arg(long, global = true, default_value_t = 1e-6)]
    eps_primal: f64,
    #[arg(long, global = true, default_value_t = 20_000)]
    max_iter: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for artifacts and the run manifest; nothing is written without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Format of the data printed on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum InitArg {
    Uniform,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Run ADMM on a problem file.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = InitArg::Uniform)]
        init: InitArg,
    },
    /// Brute-force optimum of a small problem, optionally with the gap of a solve output.
    Oracle {
        problem: PathBuf,
        /// A `solution.json` written by `solve`.
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long, default_value_t = oracle::DEFAULT_ENUMERATION_CAP)]
        cap: usize,
    },
    /// Penalty thresholds of a problem and the finite-termination check for beta and eta.
    Thresholds { problem: PathBuf },
    /// Select mini-batches from a CSV dataset by kernel MMD.
    MmdSelect {
        data: PathBuf,
        /// Number of batches.
        #[arg(long)]
        m: usize,
        #[arg(long, default_value = "matrix")]
        strategy: Strategy,
        /// Run all three strategies and print a comparison.
        #[arg(long)]
        all: bool,
        /// Gaussian bandwidth (default: median heuristic).
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Synthetic quadratic benchmark comparing selection strategies.
    SynthBench(BenchArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [20usize, 20, 20, 20])]
    group_sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    dim: usize,
    #[arg(long, default_value_t = 0.5)]
    cond_min: f64,
    #[arg(long, default_value_t = 2.0)]
    cond_max: f64,
    #[arg(long, default_value_t = 3.0)]
    centre_scale: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 4)]
    batch_size: usize,
    /// Independent instances averaged in the summary.
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [Optimizer::Sgd, Optimizer::MomentumSgd, Optimizer::Adam])]
    optimizers: Vec<Optimizer>,
    #[arg(long, value_delimiter = ',', default_values_t = Strategy::ALL)]
    strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_values_t = experiments::DEFAULT_CHECKPOINTS)]
    checkpoints: Vec<usize>,
    #[arg(long, default_value_t = 0.05)]
    lr_sgd: f64,
    #[arg(long, default_value_t = 0.05)]
    lr_momentum: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr_adam: f64,
}

/// A failed run: exit code plus a message, with the location for JSON syntax errors.
#[derive(Debug, Serialize)]
struct Failure {
    #[serde(skip)]
    code: u8,
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    column: Option<usize>,
}

impl Failure {
    fn input(msg: impl Into<String>) -> Self {
        Self {
            code: 1,
            error: msg.into(),
            line: None,
            column: None,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match &e {
            Error::TooLarge { .. } => Self {
                code: 4,
                ..Self::input(e.to_string())
            },
            Error::Json(j) => Self {
                line: Some(j.line()),
                column: Some(j.column()),
                ..Self::input(e.to_string())
            },
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

type CliResult = Result<u8, Failure>;

fn read_input(path: &Path, manifest: &mut ManifestBuilder) -> Result<Vec<u8>, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::input(format!("cannot read {}: {e}", path.display())))?;
    manifest.record_input(path, &bytes);
    Ok(bytes)
}

fn load_problem(path: &Path, manifest: &mut ManifestBuilder) -> Result<AssignmentProblem, Failure> {
    let bytes = read_input(path, manifest)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::input(format!("{} is not UTF-8", path.display())))?;
    let problem = AssignmentProblem::from_json_str(&text)?;
    for finding in problem.findings() {
        log::warn!("{finding}");
    }
    Ok(problem)
}

fn solver_config(common: &Common, default_eta: f64, init: Init) -> Result<SolverConfig, Failure> {
    let config = SolverConfig {
        beta: common.beta,
        eta: common.eta.unwrap_or(default_eta),
        eps_kkt: common.eps_kkt,
        eps_primal: common.eps_primal,
        max_iter: common.max_iter,
        seed: common.seed,
        init,
        ..Default::default()
    };
    config.validate()?;
    Ok(config)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable output"));
}

fn finish(out: Option<&OutDir>, manifest: ManifestBuilder, config: serde_json::Value) -> Result<(), Failure> {
    if let Some(dir) = out {
        dir.write_json("manifest.json", &manifest.finish(config))?;
    }
    Ok(())
}

fn out_dir(common: &Common) -> Result<Option<OutDir>, Failure> {
    common.out.as_deref().map(OutDir::create).transpose().map_err(Failure::from)
}

#[derive(Serialize)]
struct ThresholdsOutput {
    concavity: f64,
    equivalence: f64,
    kkt_binary: f64,
    beta_min_for_eta: f64,
    ok: bool,
    beta: f64,
    eta: f64,
}

impl ThresholdsOutput {
    fn new(t: EtaThresholds, config: &SolverConfig) -> Self {
        Self {
            concavity: t.concavity,
            equivalence: t.equivalence,
            kkt_binary: t.kkt_binary,
            beta_min_for_eta: config.eta / 4.0,
            ok: config.finite_termination_ok(),
            beta: config.beta,
            eta: config.eta,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SolutionFile {
    n: usize,
    m: usize,
    b: usize,
    termination: Termination,
    iterations: usize,
    /// Objective of the binary assignment below.
    objective: f64,
    /// Binary assignment, row-major: the final iterate or its rounding.
    assignment: Vec<u8>,
    /// Column of each row in the assignment.
    labels: Vec<usize>,
    /// Final iterate, row-major.
    x: Vec<f64>,
    #[serde(skip_deserializing)]
    feasibility: Option<FeasibilityReport>,
    #[serde(skip_deserializing)]
    thresholds: Option<serde_json::Value>,
}

fn cmd_solve(common: &Common, problem_path: &Path, init: InitArg) -> CliResult {
    let mut manifest = ManifestBuilder::new("solve");
    let problem = load_problem(problem_path, &mut manifest)?;
    let init_mode = match init {
        InitArg::Uniform => Init::Uniform,
        InitArg::Random => Init::RandomFeasible,
    };
    let config = solver_config(common, DEFAULT_ETA_SOLVE, init_mode)?;
    let thresholds = ThresholdsOutput::new(model::eta_thresholds(&problem), &config);
    if config.eta <= thresholds.kkt_binary {
        log::info!(
            "eta = {} is not above the binary-KKT threshold {:.4e}; fractional limits are possible",
            config.eta,
            thresholds.kkt_binary
        );
    }
    let out = out_dir(common)?;

    let report = admm::solve(&problem, &config)?;
    log::info!("{:?} after {} iterations", report.termination, report.iterations);
    let assignment = report.assignment();
    let solution = SolutionFile {
        n: problem.n(),
        m: problem.m(),
        b: problem.b(),
        termination: report.termination,
        iterations: report.iterations,
        objective: model::objective_original(&problem, assignment)?,
        assignment: model::row_major(assignment).iter().map(|&v| (v == 1.0) as u8).collect(),
        labels: oracle::matrix_to_labels(assignment)?,
        x: model::row_major(&report.final_x),
        feasibility: Some(model::feasibility(&report.final_x, &problem, config.binary_tol)?),
        thresholds: Some(serde_json::to_value(&thresholds).expect("plain struct")),
    };

    match common.format {
        Format::Json => print_json(&solution),
        Format::Csv => {
            println!("termination,iterations,objective,nonbinary_fraction");
            let nb = report.trace.last().map_or(0.0, |r| r.nonbinary_fraction);
            println!(
                "{},{},{:.16e},{nb}",
                serde_json::to_value(report.termination).expect("enum")
                    .as_str()
                    .unwrap_or_default(),
                report.iterations,
                solution.objective
            );
        }
    }
    if let Some(dir) = &out {
        dir.write_json("solution.json", &solution)?;
        let mut trace = Vec::new();
        admm::write_trace_csv(&report.trace, &mut trace)?;
        dir.write("trace.csv", &trace)?;
    }
    finish(out.as_ref(), manifest, json!({ "problem": problem_path, "solver": config }))?;
    Ok(match report.termination {
        Termination::ConvergedBinary => 0,
        Termination::ConvergedNonbinary => 2,
        Termination::MaxIter => 3,
    })
}

#[derive(Serialize)]
struct OracleOutput {
    #[serde(flatten)]
    export: OracleExport,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
}

fn cmd_oracle(common: &Common, problem_path: &Path, solution: Option<&Path>, cap: usize) -> CliResult {
    let mut manifest = ManifestBuilder::new("oracle");
    let problem = load_problem(problem_path, &mut manifest)?;
    let gap_input = match solution {
        Some(path) => {
            let bytes = read_input(path, &mut manifest)?;
            let sol: SolutionFile = serde_json::from_slice(&bytes).map_err(Error::from)?;
            if sol.n != problem.n() || sol.m != problem.m() || sol.assignment.len() != sol.n * sol.m {
                return Err(Failure::input("solution does not match the problem shape"));
            }
            let vals: Vec<f64> = sol.assignment.iter().map(|&v| v as f64).collect();
            Some(DMatrix::from_row_slice(sol.n, sol.m, &vals))
        }
        None => None,
    };
    let out = out_dir(common)?;

    let (x_opt, f_opt) = oracle::brute_force_solve_capped(&problem, cap)?;
    let candidates = oracle::assignment_count(problem.n(), problem.m(), problem.b());
    let gap = gap_input
        .map(|x| oracle::optimality_gap(&problem, &x, f_opt))
        .transpose()?;
    let output = OracleOutput {
        export: OracleExport::new(&x_opt, f_opt, candidates),
        gap,
    };
    match common.format {
        Format::Json => print_json(&output),
        Format::Csv => {
            println!("f_opt,candidates,gap");
            println!(
                "{:.16e},{},{}",
                f_opt,
                candidates,
                gap.map_or(String::new(), |g| format!("{g:.16e}"))
            );
        }
    }
    if let Some(dir) = &out {
        dir.write_json("oracle.json", &output)?;
    }
    finish(
        out.as_ref(),
        manifest,
        json!({ "problem": problem_path, "solution": solution, "cap": cap }),
    )?;
    Ok(0)
}

fn cmd_thresholds(common: &Common, problem_path: &Path) -> CliResult {
    let mut manifest = ManifestBuilder::new("thresholds");
    let problem = load_problem(problem_path, &mut manifest)?;
    let config = solver_config(common, DEFAULT_ETA_SOLVE, Init::Uniform)?;
    let out = out_dir(common)?;
    let output = ThresholdsOutput::new(model::eta_thresholds(&problem), &config);
    match common.format {
        Format::Json => print_json(&output),
        Format::Csv => {
            println!("concavity,equivalence,kkt_binary,beta_min_for_eta,ok");
            println!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                output.concavity, output.equivalence, output.kkt_binary, output.beta_min_for_eta, output.ok
            );
        }
    }
    if let Some(dir) = &out {
        dir.write_json("thresholds.json", &output)?;
    }
    finish(out.as_ref(), manifest, json!({ "problem": problem_path, "beta": config.beta, "eta": config.eta }))?;
    Ok(0)
}

#[derive(Serialize)]
struct MmdOutput {
    n: usize,
    m: usize,
    bandwidth_sigma: f64,
    plans: Vec<BatchPlan>,
    #[serde(skip_serializing_if = "Option::is_none")]
    comparison: Option<BTreeMap<String, f64>>,
}

fn cmd_mmd_select(
    common: &Common,
    data_path: &Path,
    m: usize,
    strategy: Strategy,
    all: bool,
    sigma: Option<f64>,
) -> CliResult {
    let mut manifest = ManifestBuilder::new("mmd-select");
    let bytes = read_input(data_path, &mut manifest)?;
    let data = Dataset::from_csv(bytes.as_slice())?;
    if m == 0 || data.n() % m != 0 {
        return Err(Error::Divisibility { n: data.n(), m }.into());
    }
    let config = solver_config(common, DEFAULT_ETA_MMD, Init::RandomFeasible)?;
    let out = out_dir(common)?;

    let kernel = mmd::gaussian_kernel(&data, sigma)?;
    let strategies: Vec<Strategy> = if all { Strategy::ALL.to_vec() } else { vec![strategy] };
    let plans = strategies
        .iter()
        .map(|&s| mmd::select_batches(s, &kernel, m, &config, common.seed))
        .collect::<assignqp_core::Result<Vec<_>>>()?;
    let comparison = all.then(|| plans.iter().map(|p| (p.strategy.to_string(), p.mmd)).collect());
    let output = MmdOutput {
        n: data.n(),
        m,
        bandwidth_sigma: kernel.bandwidth_sigma,
        plans,
        comparison,
    };
    match common.format {
        Format::Json => print_json(&output),
        Format::Csv => {
            println!("strategy,mmd");
            for p in &output.plans {
                println!("{},{:.16e}", p.strategy, p.mmd);
            }
        }
    }
    if let Some(dir) = &out {
        dir.write_json("plan.json", &output)?;
    }
    finish(
        out.as_ref(),
        manifest,
        json!({
            "data": data_path,
            "m": m,
            "strategies": strategies,
            "sigma": kernel.bandwidth_sigma,
            "solver": config,
        }),
    )?;
    Ok(0)
}

fn cmd_synth_bench(common: &Common, args: &BenchArgs) -> CliResult {
    let manifest = ManifestBuilder::new("synth-bench");
    let spec = SyntheticSpec {
        group_sizes: args.group_sizes.clone(),
        dim: args.dim,
        seed: common.seed,
        conditioning: (args.cond_min, args.cond_max),
        centre_scale: args.centre_scale,
        noise_scale: args.noise_scale,
    };
    spec.validate()?;
    let trains: Vec<TrainConfig> = args
        .optimizers
        .iter()
        .map(|&o| TrainConfig {
            learning_rate: match o {
                Optimizer::Sgd => args.lr_sgd,
                Optimizer::MomentumSgd => args.lr_momentum,
                Optimizer::Adam => args.lr_adam,
            },
            epochs: args.epochs,
            batch_size: args.batch_size,
            seed: common.seed,
            ..TrainConfig::new(o)
        })
        .collect();
    for t in &trains {
        t.validate()?;
    }
    if args.batch_size == 0 || !spec.n().is_multiple_of(args.batch_size) {
        return Err(Error::Divisibility { n: spec.n(), m: args.batch_size }.into());
    }
    let checkpoints: Vec<usize> = args.checkpoints.iter().copied().filter(|&c| c >= 1 && c <= args.epochs).collect();
    let solver = solver_config(common, DEFAULT_ETA_BENCH, Init::RandomFeasible)?;
    let out = out_dir(common)?;

    let cmp = experiments::compare_strategies(&spec, &args.strategies, &trains, args.seeds, &checkpoints, &solver)?;
    match common.format {
        Format::Json => print_json(&cmp.table),
        Format::Csv => {
            let mut buf = Vec::new();
            cmp.table.write_csv(&mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
    }
    if let Some(dir) = &out {
        let mut buf = Vec::new();
        cmp.table.write_csv(&mut buf)?;
        dir.write("summary.csv", &buf)?;
        let mut seen = std::collections::HashSet::new();
        for run in &cmp.runs {
            let name = format!("runs/{}_{}_seed{}.csv", run.strategy, run.optimizer.name(), run.seed_index);
            if !seen.insert(name.clone()) {
                continue;
            }
            let mut buf = Vec::new();
            run.metrics.write_csv(&mut buf)?;
            dir.write(&name, &buf)?;
        }
    }
    finish(
        out.as_ref(),
        manifest,
        json!({
            "spec": spec,
            "trains": trains,
            "seeds": args.seeds,
            "strategies": args.strategies,
            "checkpoints": checkpoints,
            "solver": solver,
        }),
    )?;
    Ok(0)
}

fn run(cli: &Cli) -> CliResult {
    if let Some(t) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::input(format!("cannot configure {t} threads: {e}")))?;
    }
    let common = &cli.common;
    match &cli.command {
        Command::Solve { problem, init } => cmd_solve(common, problem, *init),
        Command::Oracle { problem, solution, cap } => cmd_oracle(common, problem, solution.as_deref(), *cap),
        Command::Thresholds { problem } => cmd_thresholds(common, problem),
        Command::MmdSelect {
            data,
            m,
            strategy,
            all,
            sigma,
        } => cmd_mmd_select(common, data, *m, *strategy, *all, *sigma),
        Command::SynthBench(args) => cmd_synth_bench(common, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ASSIGNQP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("{}", serde_json::to_string(&failure).expect("serializable failure"));
            ExitCode::from(failure.code)
        }
    }
}
