use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rasper::concordance::{
    concordance_value, exact_rank_params, pair_weights, Concordance, Measure, PairTables, PairWeights,
};
use rasper::data::external_ranks;
use rasper::selection::{degrees_of_freedom, log_grid};
use rasper::solver::{default_nu, fit_rasper, majorize, penalized_objective, FitOptions, PenalizedProblem};

fn problem(seed: u64, n: usize, p: usize, lambda: f64, alpha: f64, measure: Measure) -> PenalizedProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let truth = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * &truth + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let scores: Vec<f64> = (0..n)
        .map(|i| (x.row(i) * &truth)[0] + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let ranks = external_ranks(&scores).unwrap();
    let nu = default_nu(&x, &y).nu;
    let conc = Concordance::new(pair_weights(&ranks, measure), PairTables::observed(x.clone()), nu).unwrap();
    PenalizedProblem::new(x, y, conc, lambda, alpha).unwrap()
}

fn measure() -> impl Strategy<Value = Measure> {
    prop_oneof![Just(Measure::Spearman), Just(Measure::Kendall)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mm_trace_never_increases(
        seed in any::<u64>(),
        n in prop_oneof![Just(8usize), Just(20)],
        p in prop_oneof![Just(2usize), Just(5)],
        lambda in prop_oneof![Just(0.0), Just(1.0), Just(10.0), Just(100.0)],
        accelerate in any::<bool>(),
        m in measure(),
    ) {
        let prob = problem(seed, n, p, lambda, 0.5, m);
        let opts = FitOptions { tol: 1e-10, max_iter: 500, accelerate };
        let fit = fit_rasper(&prob, None, opts).unwrap();
        for w in fit.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fit_improves_on_the_local_minimizer(
        seed in any::<u64>(),
        lambda in 0.1f64..200.0,
        alpha in 0.0f64..5.0,
        m in measure(),
    ) {
        let prob = problem(seed, 15, 3, lambda, alpha, m);
        let start = prob.local_minimizer().unwrap();
        let at_start = penalized_objective(&prob, prob.optimal_intercept(&start), &start).unwrap();
        let fit = fit_rasper(&prob, None, FitOptions::default()).unwrap();
        let reached = penalized_objective(&prob, fit.intercept, &fit.beta_vector()).unwrap();
        prop_assert!(reached <= at_start + 1e-12 * (1.0 + at_start.abs()));
    }

    #[test]
    fn mm_system_is_positive_definite(
        seed in any::<u64>(),
        lambda in 0.0f64..500.0,
        alpha in 1e-6f64..10.0,
        scale in 0.0f64..20.0,
    ) {
        let prob = problem(seed, 12, 4, lambda, alpha, Measure::Spearman);
        let beta = DVector::from_fn(4, |j, _| scale * ((j as f64) - 1.5));
        let maj = majorize(&prob.concordance, &beta).unwrap();
        let system = prob.gram() + DMatrix::identity(4, 4) * alpha + &maj.curvature * (2.0 * lambda);
        let min = system.symmetric_eigen().eigenvalues.min();
        prop_assert!(min > 0.0, "smallest eigenvalue {min}");
    }

    #[test]
    fn df_decreases_in_alpha(seed in any::<u64>(), a in 0.0f64..50.0, step in 0.01f64..50.0) {
        let prob = problem(seed, 20, 3, 0.0, 0.0, Measure::Spearman);
        let lo = degrees_of_freedom(&prob.with_penalties(0.0, a).unwrap()).unwrap();
        let hi = degrees_of_freedom(&prob.with_penalties(0.0, a + step).unwrap()).unwrap();
        prop_assert!(hi < lo);
    }

    #[test]
    fn grid_endpoints_are_exact(min in 1e-6f64..10.0, factor in 1.001f64..1e6, steps in 1usize..30) {
        let max = min * factor;
        let g = log_grid(min, max, steps).unwrap();
        prop_assert_eq!(g.len(), steps + 2);
        prop_assert_eq!(g[0], 0.0);
        prop_assert_eq!(g[1], min);
        prop_assert_eq!(g[steps + 1], max);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(g, log_grid(min, max, steps).unwrap());
    }

    #[test]
    fn exact_ranks_ignore_positive_scaling(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(15, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
        prop_assert_eq!(exact_rank_params(&x, &(&beta * c)), exact_rank_params(&x, &beta));
    }

    #[test]
    fn unit_weights_sum_to_half_the_pairs(seed in any::<u64>(), nu in 0.01f64..10.0, n in 2usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let beta = DVector::from_fn(2, |_, _| 5.0 * rng.sample::<f64, _>(StandardNormal));
        let ones = PairWeights::from_fn(n, |_, _| 1.0);
        let d = concordance_value(&PairTables::observed(x), &beta, nu, &ones).unwrap();
        prop_assert!((d - (n * n) as f64 / 2.0).abs() < 1e-10);
    }

    #[test]
    fn intercept_absorbs_outcome_shifts(seed in any::<u64>(), shift in -50.0f64..50.0, lambda in 0.0f64..50.0) {
        let prob = problem(seed, 15, 3, lambda, 1.0, Measure::Spearman);
        let y = prob.y().add_scalar(shift);
        let moved = PenalizedProblem::new(prob.x().clone(), y, prob.concordance.clone(), lambda, 1.0).unwrap();
        let a = fit_rasper(&prob, None, FitOptions::default()).unwrap();
        let b = fit_rasper(&moved, None, FitOptions::default()).unwrap();
        prop_assert!((a.beta_vector() - b.beta_vector()).amax() < 1e-6);
        prop_assert!((b.intercept - a.intercept - shift).abs() < 1e-6);
    }
}
