mod common;

use bilevel::approx::{FeatureMap, Policy};
use bilevel::core::{seeded_rng, TrainConfig};
use bilevel::detection::DetectionFunction;
use bilevel::envs::{behavior_policy, exact_return, generate_dataset, gridworld, EnvDescriptor, RegretEnv, TabularMDP};
use bilevel::experiments::{
    coverage_experiment, experiment_train_config, exploration_comparison, generalized_top_eigenvalue, regret_sweep,
    second_moment_exact, second_moment_rollouts, sensitivity_grid, CoverageSpec, ExploreSpec, RegretSweepSpec, SensitivitySpec,
};
use bilevel::ope::CiConfig;
use bilevel::optimizer::train;
use common::*;
use nalgebra::DMatrix;

fn small_train() -> TrainConfig {
    TrainConfig {
        outer_rounds: 3,
        inner_steps: 50,
        ..experiment_train_config()
    }
}

#[test]
fn single_cell_grid_matches_direct_training() {
    let spec = SensitivitySpec {
        lambda_grid: vec![0.1],
        c_grid: vec![1.0],
        n: 400,
        seeds: 2,
        train: small_train(),
        ..SensitivitySpec::default()
    };
    let rep = sensitivity_grid(&spec).unwrap();
    assert_eq!(rep.cells.len(), 1);
    assert_eq!(rep.best, 0);

    let m = gridworld(0.1, 0.95).unwrap();
    let pb = behavior_policy(&m, 0.5, Some(3)).unwrap();
    let fm = FeatureMap::tabular(m.num_states, m.num_actions);
    let xs: Vec<f64> = (0..2)
        .map(|seed| {
            let ds = generate_dataset(&m, &pb, 400, 100, seed).unwrap();
            let cfg = TrainConfig {
                lambda: 0.1,
                c_star: 1.0,
                seed,
                ..small_train()
            };
            let out = train(&ds, &fm, &DetectionFunction::quadratic(cfg.tau_cap), &cfg).unwrap();
            out.evaluate(|p| match p {
                Policy::Tabular(t) => exact_return(&m, t),
                _ => unreachable!(),
            })
            .unwrap()
        })
        .collect();
    let mean = (xs[0] + xs[1]) / 2.0;
    let std = ((xs[0] - mean).powi(2) + (xs[1] - mean).powi(2)).sqrt();
    assert!((rep.cells[0].mean - mean).abs() < 1e-12);
    assert!((rep.cells[0].std - std).abs() < 1e-12);
}

#[test]
fn sensitivity_rejects_empty_grid() {
    let spec = SensitivitySpec {
        c_grid: vec![],
        ..SensitivitySpec::default()
    };
    assert!(sensitivity_grid(&spec).is_err());
}

#[test]
fn on_policy_condition_number_is_one() {
    let m = TabularMDP::random(4, 3, 0.9, 11).unwrap();
    let mut rng = seeded_rng(11);
    let pi = random_tabular_policy(&mut rng, 4, 3);
    let exact = second_moment_exact(&m, &pi).unwrap();
    assert!((generalized_top_eigenvalue(&exact, &exact, 0.0).unwrap() - 1.0).abs() < 1e-9);

    // two independent estimates of the same visitation
    let fm = FeatureMap::tabular(4, 3);
    let p = Policy::Tabular(pi);
    let a = second_moment_rollouts(&m, &p, &fm, 200_000, 1).unwrap();
    let b = second_moment_rollouts(&m, &p, &fm, 200_000, 2).unwrap();
    let iota = generalized_top_eigenvalue(&a, &b, 0.0).unwrap();
    assert!((iota - 1.0).abs() < 0.05, "{iota}");
}

#[test]
fn condition_number_dominates_coordinate_ratios() {
    let mut rng = seeded_rng(12);
    for _ in 0..20 {
        let d = 5;
        let ga = DMatrix::from_fn(d, d, |_, _| uniform(&mut rng, -1.0, 1.0));
        let gb = DMatrix::from_fn(d, d, |_, _| uniform(&mut rng, -1.0, 1.0));
        let a = &ga * ga.transpose();
        let b = &gb * gb.transpose() + DMatrix::identity(d, d) * 0.1;
        let iota = generalized_top_eigenvalue(&a, &b, 0.0).unwrap();
        for k in 0..d {
            assert!(iota >= a[(k, k)] / b[(k, k)] - 1e-9);
        }
        // and any other direction
        for _ in 0..50 {
            let v = nalgebra::DVector::from_fn(d, |_, _| uniform(&mut rng, -1.0, 1.0));
            let ratio = (v.transpose() * &a * &v)[0] / (v.transpose() * &b * &v)[0];
            assert!(iota >= ratio - 1e-9);
        }
    }
}

#[test]
fn extra_sigma_never_lowers_coverage() {
    let base = CoverageSpec {
        n: 300,
        reps: 12,
        ci: CiConfig {
            steps: 100,
            ..CiConfig::default()
        },
        ..CoverageSpec::default()
    };
    let wide = CoverageSpec {
        ci: CiConfig {
            sigma_extra: 2.0,
            ..base.ci.clone()
        },
        ..base.clone()
    };
    let a = coverage_experiment(&base).unwrap();
    let b = coverage_experiment(&wide).unwrap();
    assert_eq!(a.truth, b.truth);
    assert!(b.coverage >= a.coverage);
    assert!(b.mean_width > a.mean_width);
    for (x, y) in a.rows.iter().zip(&b.rows) {
        assert!(y.lower <= x.lower && y.upper >= x.upper);
    }
}

#[test]
fn coverage_threshold_follows_delta_and_reps() {
    let spec = CoverageSpec {
        n: 200,
        reps: 4,
        ci: CiConfig {
            steps: 20,
            ..CiConfig::default()
        },
        ..CoverageSpec::default()
    };
    let rep = coverage_experiment(&spec).unwrap();
    assert!((rep.threshold - (0.9 - 2.0 * (0.09f64 / 4.0).sqrt())).abs() < 1e-12);
    assert_eq!(rep.rows.len(), 4);
}

#[test]
fn exploration_rows_carry_exact_behavior_return() {
    let spec = ExploreSpec {
        alphas: vec![0.5, 1.0],
        n: 300,
        seeds: 2,
        train: small_train(),
        ..ExploreSpec::default()
    };
    let rep = exploration_comparison(&spec).unwrap();
    assert_eq!(rep.rows.len(), 4);
    let m = gridworld(0.1, 0.95).unwrap();
    for s in &rep.summary {
        let jb = exact_return(&m, &behavior_policy(&m, s.alpha, Some(3)).unwrap()).unwrap();
        assert!((s.behavior_return - jb).abs() < 1e-12);
    }
    let bad = ExploreSpec {
        env: EnvDescriptor::Regret(RegretEnv::default()),
        ..spec
    };
    assert!(exploration_comparison(&bad).is_err());
}

#[test]
fn regret_sweep_shapes_and_nonnegativity() {
    let spec = RegretSweepSpec {
        n_grid: vec![100, 200, 400],
        seeds: 2,
        train: TrainConfig {
            outer_rounds: 2,
            inner_steps: 20,
            ..experiment_train_config()
        },
        eval_episodes: 5,
        ..RegretSweepSpec::default()
    };
    let t = regret_sweep(&spec).unwrap();
    assert_eq!(t.rows.len(), 6);
    assert_eq!(t.summary.iter().map(|s| s.n).collect::<Vec<_>>(), vec![100, 200, 400]);
    assert!(t.behavior_regret > 0.0);
    for r in &t.rows {
        assert!(r.error.is_none());
        assert!(r.regret.unwrap() >= -1e-9);
        assert!(r.lambda > 0.0 && r.lambda == r.c_star);
    }
    let again = regret_sweep(&spec).unwrap();
    assert_eq!(t, again);
    let unordered = RegretSweepSpec {
        n_grid: vec![200, 100],
        ..spec
    };
    assert!(regret_sweep(&unordered).is_err());
}
