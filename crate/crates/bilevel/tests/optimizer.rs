mod common;

use bilevel::approx::{FeatureMap, LinearQ, LinearTau, Policy, SoftmaxPolicy, TabularPolicy, TauModel};
use bilevel::core::{seeded_rng, OfflineDataset, TrainConfig, Transition};
use bilevel::detection::{DetectionFunction, DetectionKind};
use bilevel::optimizer::{
    adversarial_loss, adversarial_loss_parts, eta_schedule, hyperparam_rule, mirror_policy_update, prox_tau_step, solve_inner_q,
    tau_gradient, train, zeta_default, zeta_precondition_met,
};
use common::*;

#[allow(clippy::too_many_arguments)]
fn naive_loss(
    q: &LinearQ<f64>,
    tau: &TauModel<f64>,
    pi: &Policy<f64>,
    c: f64,
    lambda: f64,
    ds: &OfflineDataset<f64>,
    fm: &FeatureMap<f64>,
    det: &DetectionFunction<f64>,
) -> f64 {
    let g = ds.discount();
    let n = ds.len() as f64;
    let mut agg = 0.0;
    let mut pen = 0.0;
    for t in ds.transitions() {
        let ti = tau.forward(&fm.featurize(&t.s, t.a).unwrap());
        let delta = q.q_value(fm, &t.s, t.a).unwrap() - t.r - g * q.q_expect(fm, pi, &t.sp).unwrap();
        agg += ti * delta;
        pen += det.eval(ti).unwrap();
    }
    q.q_expect(fm, pi, ds.initial_state()).unwrap() + (c * agg.abs() - lambda * pen) / ((1.0 - g) * n)
}

#[test]
fn loss_with_zero_weights_is_q0_minus_penalty() {
    let (ds, fm) = linear_problem(1, 40, 2, 3, 0.9);
    let mut rng = seeded_rng(2);
    let pi = random_softmax(&mut rng, &fm, 1.0);
    let q = random_q(&mut rng, fm.dim(), 1.0, 100.0);
    let mut t = LinearTau::unit(fm.dim(), 10.0);
    let last = t.params.len() - 1;
    t.params[last] = -800.0;
    let tau = TauModel::Linear(t);
    let det = DetectionFunction::quadratic(10.0);
    let l = adversarial_loss(&q, &tau, &pi, 0.7, 0.3, &ds, &fm, &det).unwrap();
    let q0 = q.q_expect(&fm, &pi, ds.initial_state()).unwrap();
    assert!((l - (q0 - 0.3 * 0.5 / 0.1)).abs() < 1e-10);
}

#[test]
fn loss_with_zero_theta_and_unit_weights() {
    let (ds, fm) = linear_problem(3, 25, 2, 2, 0.8);
    let mut rng = seeded_rng(3);
    let pi = random_softmax(&mut rng, &fm, 1.0);
    let q = LinearQ::zeros(fm.dim(), 10.0);
    let tau = TauModel::Linear(LinearTau::unit(fm.dim(), 5.0));
    let det = DetectionFunction::quadratic(5.0);
    let l = adversarial_loss(&q, &tau, &pi, 1.3, 2.0, &ds, &fm, &det).unwrap();
    let rsum: f64 = ds.transitions().iter().map(|t| t.r).sum();
    assert!((l - 1.3 * rsum.abs() / (0.2 * 25.0)).abs() < 1e-10);
}

#[test]
fn loss_matches_naive_reimplementation() {
    for seed in 0..5 {
        let (ds, fm) = linear_problem(seed, 30, 3, 2, 0.95);
        let mut rng = seeded_rng(100 + seed);
        let pi = random_softmax(&mut rng, &fm, 2.0);
        let q = random_q(&mut rng, fm.dim(), 3.0, 100.0);
        let tau = random_network_tau(&mut rng, fm.dim(), 6, 10.0, 0.5);
        for kind in [DetectionKind::Quadratic, DetectionKind::SoftChiSquare] {
            let det = DetectionFunction::new(kind, 10.0).unwrap();
            let fast = adversarial_loss(&q, &tau, &pi, 0.9, 0.4, &ds, &fm, &det).unwrap();
            let slow = naive_loss(&q, &tau, &pi, 0.9, 0.4, &ds, &fm, &det);
            assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        }
    }
}

#[test]
fn loss_on_tabular_features_uses_the_same_formula() {
    // the sparse row path must agree with the dense one
    let (ds, fm) = tabular_problem(8, 60, 5, 3, 0.9);
    let mut rng = seeded_rng(8);
    let pi = Policy::Tabular(random_tabular_policy(&mut rng, 5, 3));
    let q = random_q(&mut rng, fm.dim(), 2.0, 100.0);
    let tau = random_linear_tau(&mut rng, fm.dim(), 10.0, 0.5);
    let det = DetectionFunction::quadratic(10.0);
    let fast = adversarial_loss(&q, &tau, &pi, 1.1, 0.2, &ds, &fm, &det).unwrap();
    let slow = naive_loss(&q, &tau, &pi, 1.1, 0.2, &ds, &fm, &det);
    assert!((fast - slow).abs() < 1e-10);
    let g = tau_gradient(&q, &tau, &pi, 1.1, 0.2, &ds, &fm, &det).unwrap();
    let fd = central_diff(
        |p| {
            let mut t = tau.clone();
            t.params_mut().copy_from_slice(p);
            naive_loss(&q, &t, &pi, 1.1, 0.2, &ds, &fm, &det)
        },
        tau.params(),
        1e-5,
    );
    assert!(max_rel_err(&g, &fd, 1e-6) < 1e-4);
}

#[test]
fn tau_gradient_matches_finite_differences() {
    let mut worst: f64 = 0.0;
    for cfg in 0..30u64 {
        let (ds, fm) = linear_problem(cfg, 20 + cfg as usize, 2, 2, 0.9);
        let mut rng = seeded_rng(1000 + cfg);
        let pi = random_softmax(&mut rng, &fm, 1.0);
        let q = random_q(&mut rng, fm.dim(), 2.0, 100.0);
        let tau = if cfg % 2 == 0 {
            random_linear_tau(&mut rng, fm.dim(), 10.0, 0.7)
        } else {
            random_network_tau(&mut rng, fm.dim(), 5, 10.0, 0.3)
        };
        let kind = if cfg % 3 == 0 {
            DetectionKind::SoftChiSquare
        } else {
            DetectionKind::Quadratic
        };
        let det = DetectionFunction::new(kind, 10.0).unwrap();
        let (c, lambda) = (uniform(&mut rng, 0.1, 2.0), uniform(&mut rng, 0.1, 2.0));
        let g = tau_gradient(&q, &tau, &pi, c, lambda, &ds, &fm, &det).unwrap();
        let fd = central_diff(
            |p| {
                let mut t = tau.clone();
                t.params_mut().copy_from_slice(p);
                adversarial_loss(&q, &t, &pi, c, lambda, &ds, &fm, &det).unwrap()
            },
            tau.params(),
            1e-5,
        );
        worst = worst.max(max_rel_err(&g, &fd, 1e-6));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn gradient_vanishes_at_zero_residuals_and_unit_weights() {
    // r = q(s,a) − γ q(s′,π) row by row makes every residual zero
    let (raw, fm) = linear_problem(5, 30, 2, 2, 0.9);
    let mut rng = seeded_rng(5);
    let pi = random_softmax(&mut rng, &fm, 1.0);
    let q = random_q(&mut rng, fm.dim(), 1.0, 100.0);
    let rows = raw
        .transitions()
        .iter()
        .map(|t| {
            let r = q.q_value(&fm, &t.s, t.a).unwrap() - 0.9 * q.q_expect(&fm, &pi, &t.sp).unwrap();
            Transition::new(t.s.clone(), t.a, r, t.sp.clone())
        })
        .collect();
    let ds = OfflineDataset::new(rows, raw.initial_state().to_vec(), 2, 0.9).unwrap();
    let tau = TauModel::Linear(LinearTau::unit(fm.dim(), 10.0));
    let det = DetectionFunction::quadratic(10.0);
    let g = tau_gradient(&q, &tau, &pi, 1.0, 1.0, &ds, &fm, &det).unwrap();
    assert!(g.iter().all(|x| x.abs() < 1e-12), "{g:?}");
}

#[test]
fn zero_rewards_and_theta_leave_only_the_penalty_term() {
    let (raw, fm) = linear_problem(6, 30, 2, 2, 0.9);
    let rows = raw
        .transitions()
        .iter()
        .map(|t| Transition::new(t.s.clone(), t.a, 0.0, t.sp.clone()))
        .collect();
    let ds = OfflineDataset::new(rows, raw.initial_state().to_vec(), 2, 0.9).unwrap();
    let mut rng = seeded_rng(6);
    let pi = random_softmax(&mut rng, &fm, 1.0);
    let q = LinearQ::zeros(fm.dim(), 10.0);
    let tau = random_linear_tau(&mut rng, fm.dim(), 10.0, 0.5);
    let det = DetectionFunction::quadratic(10.0);
    let with_c = tau_gradient(&q, &tau, &pi, 5.0, 0.7, &ds, &fm, &det).unwrap();
    let without_c = tau_gradient(&q, &tau, &pi, 0.0, 0.7, &ds, &fm, &det).unwrap();
    assert_eq!(with_c, without_c);
    // and it is −λ Σ D′(τᵢ)∇τᵢ /((1−γ)n)
    let mut expect = vec![0.0; tau.params().len()];
    for t in ds.transitions() {
        let x = fm.featurize(&t.s, t.a).unwrap();
        let ti = tau.forward(&x);
        tau.accumulate_grad(&x, -0.7 * (ti - 1.0) / (0.1 * 30.0), &mut expect);
    }
    assert!(max_rel_err(&with_c, &expect, 1e-12) < 1e-10);
}

/// min over θ ∈ [−R, R] of a·θ + κ|gθ − b|: the minimum sits at an end of
/// the interval or at the kink.
fn two_branch_min(a: f64, kappa: f64, g: f64, b: f64, r: f64) -> f64 {
    let f = |t: f64| a * t + kappa * (g * t - b).abs();
    let mut cands = vec![-r, r];
    if g != 0.0 {
        cands.push((b / g).clamp(-r, r));
    }
    cands.into_iter().map(f).fold(f64::INFINITY, f64::min)
}

#[test]
fn inner_q_matches_two_branch_closed_form() {
    // one state, one action: φ ≡ 1, so L(θ) = θ + κ|(1−γ)θΣτ − Στr| − const
    for (seed, c_star, radius) in [(0u64, 3.0, 5.0), (1, 0.2, 5.0), (2, 1.0, 0.5), (3, 10.0, 50.0)] {
        let mut rng = seeded_rng(seed);
        let rows: Vec<_> = (0..20)
            .map(|_| Transition::new(vec![0.0], 0, uniform(&mut rng, 0.0, 1.0), vec![0.0]))
            .collect();
        let gamma = 0.9;
        let ds = OfflineDataset::new(rows, vec![0.0], 1, gamma).unwrap();
        let fm = FeatureMap::tabular(1, 1);
        let pi = Policy::Tabular(TabularPolicy::uniform(1, 1));
        let tau = random_linear_tau(&mut rng, 1, 10.0, 0.5);
        let det = DetectionFunction::quadratic(10.0);
        let q0 = LinearQ {
            theta: vec![0.0],
            radius,
        };
        let q = solve_inner_q(&q0, &tau, &pi, c_star, &ds, &fm, 1_000_000, 2e-5).unwrap();
        assert!(q.theta[0].abs() <= radius + 1e-12);

        let x = fm.featurize(&[0.0], 0).unwrap();
        let ti = tau.forward(&x);
        let n = ds.len() as f64;
        let g = (1.0 - gamma) * ti * n;
        let b: f64 = ds.transitions().iter().map(|t| ti * t.r).sum();
        let kappa = c_star / ((1.0 - gamma) * n);
        let oracle = two_branch_min(1.0, kappa, g, b, radius);
        let parts = adversarial_loss_parts(&q, &tau, &pi, c_star, 0.0, &ds, &fm, &det).unwrap();
        assert!(
            (parts.value - oracle).abs() < 1e-4,
            "seed {seed}: {} vs {oracle}",
            parts.value
        );
    }
}

#[test]
fn inner_q_never_increases_the_loss() {
    for seed in 0..5 {
        let (ds, fm) = linear_problem(seed, 40, 2, 3, 0.9);
        let mut rng = seeded_rng(50 + seed);
        let pi = random_softmax(&mut rng, &fm, 1.0);
        let tau = random_linear_tau(&mut rng, fm.dim(), 10.0, 0.5);
        let det = DetectionFunction::quadratic(10.0);
        let q0 = random_q(&mut rng, fm.dim(), 1.0, 3.0);
        let before = adversarial_loss(&q0, &tau, &pi, 1.0, 0.5, &ds, &fm, &det).unwrap();
        let q = solve_inner_q(&q0, &tau, &pi, 1.0, &ds, &fm, 50, 5e-3).unwrap();
        let after = adversarial_loss(&q, &tau, &pi, 1.0, 0.5, &ds, &fm, &det).unwrap();
        assert!(after <= before + 1e-12);
        assert!(bilevel::approx::project_ball(&q.theta, 3.0) == q.theta);
    }
    let (ds, fm) = linear_problem(0, 10, 1, 2, 0.9);
    let pi = Policy::Softmax(SoftmaxPolicy::uniform(fm.clone(), f64::INFINITY));
    let tau = TauModel::Linear(LinearTau::unit(fm.dim(), 10.0));
    assert!(solve_inner_q(&LinearQ::zeros(fm.dim(), 1.0), &tau, &pi, 1.0, &ds, &fm, 0, 5e-3).is_err());
}

#[test]
fn prox_step_properties() {
    let mut rng = seeded_rng(9);
    let tau = random_linear_tau(&mut rng, 1, 10.0, 1.0);
    let zero = vec![0.0; 2];
    assert_eq!(prox_tau_step(&tau, &zero, 0.1).unwrap(), tau);
    let grad = vec_in(&mut rng, 2, -1.0, 1.0);
    let full = prox_tau_step(&tau, &grad, 0.2).unwrap();
    let half = prox_tau_step(&prox_tau_step(&tau, &grad, 0.1).unwrap(), &grad, 0.1).unwrap();
    for (a, b) in full.params().iter().zip(half.params()) {
        assert!((a - b).abs() < 1e-14);
    }
    assert!(prox_tau_step(&tau, &grad, 0.0).is_err());
    assert!(prox_tau_step(&tau, &[1.0], 0.1).is_err());
}

#[test]
fn prox_step_is_the_grid_argmax() {
    let mut rng = seeded_rng(10);
    for _ in 0..5 {
        let tau = random_linear_tau(&mut rng, 1, 10.0, 1.0);
        let grad = vec_in(&mut rng, 2, -2.0, 2.0);
        let eta = uniform(&mut rng, 0.05, 0.5);
        let star = tau.params().to_vec();
        let obj = |p: &[f64]| {
            let lin: f64 = p.iter().zip(&grad).map(|(a, b)| a * b).sum();
            let d2: f64 = p.iter().zip(&star).map(|(a, b)| (a - b) * (a - b)).sum();
            lin - d2 / (2.0 * eta)
        };
        let h = 0.002;
        let mut best = (f64::NEG_INFINITY, vec![0.0; 2]);
        for i in -1000..=1000 {
            for j in -1000..=1000 {
                let p = [star[0] + i as f64 * h, star[1] + j as f64 * h];
                let v = obj(&p);
                if v > best.0 {
                    best = (v, p.to_vec());
                }
            }
        }
        let closed = prox_tau_step(&tau, &grad, eta).unwrap();
        for (a, b) in closed.params().iter().zip(&best.1) {
            assert!((a - b).abs() <= h, "{a} vs {b}");
        }
        assert!(obj(closed.params()) >= best.0 - 1e-12);
    }
}

#[test]
fn eta_schedule_examples() {
    assert!((eta_schedule(1e-3f64, 1) - 1e-3 / 1.3).abs() < 1e-18);
    let mut prev = f64::INFINITY;
    for t in 1..200 {
        let e = eta_schedule(1e-3f64, t);
        assert!(e < prev && e > 0.0);
        prev = e;
    }
    assert_eq!(TrainConfig::default().eta0, 1e-3);
    assert_eq!(TrainConfig::default().q_lr, 5e-3);
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (a / b).ln())
        .sum()
}

#[test]
fn mirror_update_examples() {
    let fm = FeatureMap::tabular(1, 2);
    let pi = Policy::Tabular(TabularPolicy::uniform(1, 2));
    let q = LinearQ {
        theta: vec![1.0, 0.0],
        radius: 10.0,
    };
    let out = mirror_policy_update(&pi, &q, &fm, 2f64.ln()).unwrap();
    let p = out.probs(&[0.0]).unwrap();
    assert!((p[0] - 2.0 / 3.0).abs() < 1e-12 && (p[1] - 1.0 / 3.0).abs() < 1e-12);
    let zero = LinearQ::zeros(2, 10.0);
    assert_eq!(
        mirror_policy_update(&pi, &zero, &fm, 0.7).unwrap().probs(&[0.0]).unwrap(),
        vec![0.5, 0.5]
    );
}

#[test]
fn mirror_update_is_the_simplex_grid_argmax() {
    let mut rng = seeded_rng(11);
    let fm = FeatureMap::tabular(1, 2);
    for _ in 0..20 {
        let prev = random_tabular_policy(&mut rng, 1, 2);
        let q = random_q(&mut rng, 2, 3.0, 100.0);
        let zeta = uniform(&mut rng, 0.1, 2.0);
        let obj = |p: &[f64]| zeta * (q.theta[0] * p[0] + q.theta[1] * p[1]) - kl(p, &prev.probs[0]);
        let (best, arg) = (0..=200)
            .map(|k| {
                let p = [k as f64 / 200.0, 1.0 - k as f64 / 200.0];
                (obj(&p), p[0])
            })
            .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
        let new = mirror_policy_update(&Policy::Tabular(prev.clone()), &q, &fm, zeta).unwrap();
        let p = new.probs(&[0.0]).unwrap();
        assert!((obj(&p) - best).abs() < 1e-3);
        assert!(obj(&p) >= best - 1e-12);
        assert!((p[0] - arg).abs() <= 0.005 + 1e-12);
    }
}

#[test]
fn logit_addition_equals_tabular_update() {
    let mut rng = seeded_rng(12);
    let (ns, na) = (4, 3);
    let fm = FeatureMap::tabular(ns, na);
    for _ in 0..10 {
        let mut sp = SoftmaxPolicy::uniform(fm.clone(), f64::INFINITY);
        sp.omega = vec_in(&mut rng, fm.dim(), -2.0, 2.0);
        let soft = Policy::Softmax(sp);
        let rows: Vec<Vec<f64>> = (0..ns).map(|s| soft.probs(&[s as f64]).unwrap()).collect();
        let tab = Policy::Tabular(TabularPolicy::new(rows).unwrap());
        let q = random_q(&mut rng, fm.dim(), 2.0, 100.0);
        let zeta = uniform(&mut rng, 0.1, 1.5);
        let a = mirror_policy_update(&soft, &q, &fm, zeta).unwrap();
        let b = mirror_policy_update(&tab, &q, &fm, zeta).unwrap();
        for s in 0..ns {
            let (pa, pb) = (a.probs(&[s as f64]).unwrap(), b.probs(&[s as f64]).unwrap());
            for (x, y) in pa.iter().zip(&pb) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }
    let other = FeatureMap::linear(1, na);
    let soft = Policy::Softmax(SoftmaxPolicy::uniform(other, f64::INFINITY));
    assert!(mirror_policy_update(&soft, &LinearQ::zeros(fm.dim(), 1.0), &fm, 0.1).is_err());
}

#[test]
fn zeta_examples() {
    // |A| = 3 with V̄ = ln 3 / 2 and K̄ = 1 gives ζ = 1
    let z = zeta_default(3, 3f64.ln() / 2.0, 1).unwrap();
    assert!((z - 1.0).abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for k in 1..50 {
        let z = zeta_default(4, 20.0, k).unwrap();
        assert!(z < prev);
        prev = z;
    }
    assert!(!zeta_precondition_met(100, 2));
    assert!(zeta_precondition_met(4, 2));
    assert!(zeta_default(4, 0.0, 3).is_err());
    let cfg: TrainConfig = serde_json::from_str(r#"{"zeta": 3e-3}"#).unwrap();
    assert_eq!(cfg.zeta, 3e-3);
}

#[test]
fn hyperparam_rule_examples() {
    let (l, c) = hyperparam_rule(1500, 4, 20.0).unwrap();
    assert_eq!(l, c);
    // 2·1500^{1/4} / (3·4·ln(20·√1500)), evaluated through exp/ln
    let num = 2.0 * (1500f64.ln() / 4.0).exp();
    let den = 12.0 * (20f64.ln() + 0.5 * 1500f64.ln());
    assert!((l - num / den).abs() < 1e-12);
    assert!((l - 0.155_92).abs() < 1e-4);
    let (l2, _) = hyperparam_rule(24_000, 4, 20.0).unwrap();
    let ratio = l2 / l;
    // 16× the data doubles n^{1/4}; the log factor shrinks it a little
    assert!(ratio > 1.6 && ratio < 2.0, "{ratio}");
    assert!(hyperparam_rule(1, 4, 20.0).is_err());
    assert!(hyperparam_rule(100, 4, 0.05).is_err());
}

fn small_config() -> TrainConfig {
    TrainConfig {
        outer_rounds: 3,
        inner_steps: 20,
        ..TrainConfig::default()
    }
}

#[test]
fn no_op_run_returns_the_initial_policy() {
    let (ds, fm) = tabular_problem(13, 50, 3, 2, 0.9);
    let cfg = TrainConfig {
        outer_rounds: 1,
        inner_steps: 0,
        zeta: 0.0,
        ..TrainConfig::default()
    };
    let out = train(&ds, &fm, &DetectionFunction::quadratic(cfg.tau_cap), &cfg).unwrap();
    assert_eq!(out.policy, Policy::Tabular(TabularPolicy::uniform(3, 2)));
    assert_eq!(out.trace.rounds.len(), 1);
}

#[test]
fn training_is_deterministic_and_keeps_bounds() {
    let (ds, fm) = linear_problem(14, 80, 2, 3, 0.9);
    let cfg = TrainConfig {
        q_radius: 2.0,
        ..small_config()
    };
    let det = DetectionFunction::quadratic(cfg.tau_cap);
    let a = train(&ds, &fm, &det, &cfg).unwrap();
    let b = train(&ds, &fm, &det, &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.trace.to_csv(), b.trace.to_csv());
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.trace.rounds.len(), cfg.outer_rounds);
    assert!(a.trace.rounds.iter().all(|r| r.loss.is_finite()));
    let norm: f64 = a.state.q.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(norm <= cfg.q_radius + 1e-12);
    for t in ds.transitions() {
        let v = a.state.tau.forward(&fm.featurize(&t.s, t.a).unwrap());
        assert!((0.0..=cfg.tau_cap).contains(&v));
    }
    for t in ds.transitions().iter().take(10) {
        let p = a.policy.probs(&t.s).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let c = train(&ds, &fm, &det, &TrainConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.trace, c.trace);
}

#[test]
fn training_rejects_mismatched_detection_cap() {
    let (ds, fm) = tabular_problem(15, 30, 3, 2, 0.9);
    let cfg = small_config();
    assert!(train(&ds, &fm, &DetectionFunction::quadratic(cfg.tau_cap * 2.0), &cfg).is_err());
}

#[test]
fn f32_training_runs() {
    let (ds, fm) = tabular_problem(16, 60, 3, 2, 0.9);
    let ds32 = ds.map_scalar::<f32>();
    let fm32 = FeatureMap::<f32>::tabular(3, 2);
    let _ = fm;
    let cfg = small_config();
    let out = train(&ds32, &fm32, &DetectionFunction::quadratic(cfg.tau_cap as f32), &cfg).unwrap();
    let p = out.policy.probs(&[0.0f32]).unwrap();
    assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
}
