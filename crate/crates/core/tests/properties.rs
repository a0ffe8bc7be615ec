use assignqp_core::admm::{self, project_assignment, Init, SolverConfig};
use assignqp_core::experiments::{generate_synthetic, SyntheticSpec};
use assignqp_core::mmd::{self, Dataset};
use assignqp_core::model::{augmented_lagrangian, feasibility, objective_original, objective_regularized, AssignmentProblem};
use assignqp_core::oracle;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=4, 1usize..=3).prop_map(|(m, b)| (m * b, m))
}

fn random_problem(n: usize, m: usize, seed: u64) -> AssignmentProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    AssignmentProblem::new(&f * f.transpose(), g, m).unwrap()
}

fn random_data(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Dataset::new((0..n).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0))).collect()).unwrap()
}

/// Removes row and column means, leaving a direction with zero row and column sums.
fn null_direction(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, m) = w.shape();
    let grand = w.sum() / (n * m) as f64;
    DMatrix::from_fn(n, m, |i, j| {
        w[(i, j)] - w.row(i).sum() / m as f64 - w.column(j).sum() / n as f64 + grand
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn projection_is_idempotent_and_orthogonal((n, m) in shape(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bmat = DMatrix::from_fn(n, m, |_, _| rng.random_range(-5.0..5.0));
        let y = project_assignment(&bmat);
        prop_assert!((project_assignment(&y) - &y).amax() <= 1e-12);
        let z = null_direction(&DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0)));
        prop_assert!((&y - &bmat).dot(&z).abs() <= 1e-8);
    }

    #[test]
    fn regularizer_counts_rows_on_assignments((n, m) in shape(), eta in 0.0f64..10.0, pick in any::<u64>()) {
        let problem = random_problem(n, m, pick);
        let count = oracle::assignment_count(n, m, n / m) as u64;
        let x = oracle::enumerate_assignments(n, m, n / m).unwrap().nth((pick % count) as usize).unwrap();
        let parts = objective_regularized(&problem, &x, eta).unwrap();
        prop_assert_eq!(parts.regularizer, eta * n as f64);
    }

    #[test]
    fn lagrangian_on_the_diagonal_ignores_multipliers((n, m) in shape(), seed in any::<u64>(), beta in 0.1f64..100.0) {
        let problem = random_problem(n, m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        // a convex combination of two assignments lies in the relaxed feasible set
        let count = oracle::assignment_count(n, m, n / m) as usize;
        let pick = |k: usize| oracle::enumerate_assignments(n, m, n / m).unwrap().nth(k % count).unwrap();
        let t = rng.random_range(0.0..1.0);
        let x = pick(rng.random_range(0..count)) * t + pick(rng.random_range(0..count)) * (1.0 - t);
        let lambda = DMatrix::from_fn(n, m, |_, _| rng.random_range(-10.0..10.0));
        let l = augmented_lagrangian(&problem, &x, &x, &lambda, beta, 0.7).unwrap();
        let f = objective_regularized(&problem, &x, 0.7).unwrap().total;
        prop_assert!((l - f).abs() <= 1e-12 * f.abs().max(1.0));
    }

    #[test]
    fn admm_output_never_beats_the_oracle((n, m) in shape(), seed in any::<u64>(), eta in 0.0f64..3.0) {
        let problem = random_problem(n, m, seed);
        let config = SolverConfig { eta, max_iter: 2000, init: Init::RandomFeasible, seed, ..Default::default() };
        let report = admm::solve(&problem, &config).unwrap();
        let x = report.assignment();
        prop_assert!(feasibility(x, &problem, 0.0).unwrap().is_assignment);
        let (_, f_opt) = oracle::brute_force_solve(&problem).unwrap();
        prop_assert!(f_opt <= objective_original(&problem, x).unwrap() + 1e-12);
    }

    #[test]
    fn mmd_matches_problem_objective_plus_constant(seed in any::<u64>(), m in prop::sample::select(vec![1usize, 2, 3, 6])) {
        let kernel = mmd::gaussian_kernel(&random_data(6, seed), None).unwrap();
        let (problem, constant) = mmd::build_mmd_problem(&kernel, m).unwrap();
        let g = problem.g();
        for j in 1..m {
            prop_assert_eq!(g.column(j), g.column(0));
        }
        let batches = mmd::random_batches(6, m, seed).unwrap();
        let mut x = DMatrix::zeros(6, m);
        for (j, batch) in batches.iter().enumerate() {
            for &i in batch {
                x[(i, j)] = 1.0;
            }
        }
        let direct = mmd::mmd_objective(&x, &kernel, 6 / m).unwrap();
        let assembled = (2.0 * objective_original(&problem, &x).unwrap() + m as f64 * constant) / m as f64;
        prop_assert!(direct >= -1e-10);
        prop_assert!((direct - assembled).abs() <= 1e-12 * direct.abs().max(1.0), "{} vs {}", direct, assembled);
    }

    #[test]
    fn batch_gradients_are_unbiased_for_every_plan(seed in any::<u64>(), m in prop::sample::select(vec![1usize, 2, 3, 4, 6, 12])) {
        let inst = generate_synthetic(&SyntheticSpec { group_sizes: vec![4, 8], dim: 3, seed, ..Default::default() }).unwrap();
        let batches = mmd::random_batches(12, m, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        let avg = batches.iter().fold(DVector::zeros(3), |acc, b| acc + inst.batch_gradient(&x, b)) / m as f64;
        let full = inst.full_gradient(&x);
        prop_assert!((avg - &full).amax() <= 1e-12 * full.amax().max(1.0));
    }
}

/// Small-instance matrix selection against brute force. The method is local,
/// so misses are counted and printed rather than hidden.
#[test]
fn small_matrix_selection_versus_brute_force() {
    let (mut hits, mut total) = (0, 0);
    for seed in 0..20 {
        for (n, m) in [(4, 2), (6, 2), (6, 3), (8, 2), (8, 4)] {
            let kernel = mmd::gaussian_kernel(&random_data(n, seed), None).unwrap();
            let cfg = SolverConfig { eta: 0.3, seed, ..Default::default() };
            let plan = mmd::select_batches_matrix(&kernel, m, &cfg).unwrap();
            let (_, best) = mmd::brute_force_plan(&kernel, m).unwrap();
            assert!(plan.mmd >= best - 1e-12);
            total += 1;
            if plan.mmd <= best + 1e-9 {
                hits += 1;
            }
        }
    }
    println!("matrix selection reached the brute-force optimum on {hits}/{total} small instances");
    assert!(hits > 0);
}
