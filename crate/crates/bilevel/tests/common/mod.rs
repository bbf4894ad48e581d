#![allow(dead_code)]

use bilevel::approx::{FeatureMap, LinearQ, LinearTau, Policy, SoftmaxPolicy, TabularPolicy, TauModel, TauNetwork};
use bilevel::core::{seeded_rng, OfflineDataset, Transition};
use rand::{Rng, RngCore};

pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn vec_in(rng: &mut impl RngCore, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, lo, hi)).collect()
}

/// Random continuous-state data with linear features.
pub fn linear_problem(
    seed: u64,
    n: usize,
    state_dim: usize,
    num_actions: usize,
    gamma: f64,
) -> (OfflineDataset<f64>, FeatureMap<f64>) {
    let mut rng = seeded_rng(seed);
    let rows = (0..n)
        .map(|_| {
            let s = vec_in(&mut rng, state_dim, -1.0, 1.0);
            let sp = vec_in(&mut rng, state_dim, -1.0, 1.0);
            Transition::new(s, rng.random_range(0..num_actions), uniform(&mut rng, 0.0, 1.0), sp)
        })
        .collect();
    let s0 = vec_in(&mut rng, state_dim, -1.0, 1.0);
    let ds = OfflineDataset::new(rows, s0, num_actions, gamma).unwrap();
    (ds, FeatureMap::linear(state_dim, num_actions))
}

/// Random transitions over `num_states` tabular ids.
pub fn tabular_problem(
    seed: u64,
    n: usize,
    num_states: usize,
    num_actions: usize,
    gamma: f64,
) -> (OfflineDataset<f64>, FeatureMap<f64>) {
    let mut rng = seeded_rng(seed);
    let rows = (0..n)
        .map(|_| {
            let s = rng.random_range(0..num_states) as f64;
            let sp = rng.random_range(0..num_states) as f64;
            Transition::new(
                vec![s],
                rng.random_range(0..num_actions),
                uniform(&mut rng, 0.0, 1.0),
                vec![sp],
            )
        })
        .collect();
    let ds = OfflineDataset::new(rows, vec![0.0], num_actions, gamma).unwrap();
    (ds, FeatureMap::tabular(num_states, num_actions))
}

pub fn random_softmax(rng: &mut impl RngCore, fm: &FeatureMap<f64>, scale: f64) -> Policy<f64> {
    let mut p = SoftmaxPolicy::uniform(fm.clone(), f64::INFINITY);
    p.omega = vec_in(rng, fm.dim(), -scale, scale);
    Policy::Softmax(p)
}

pub fn random_tabular_policy(rng: &mut impl RngCore, num_states: usize, num_actions: usize) -> TabularPolicy<f64> {
    let probs = (0..num_states)
        .map(|_| {
            let w = vec_in(rng, num_actions, 0.05, 1.0);
            let z: f64 = w.iter().sum();
            w.iter().map(|x| x / z).collect()
        })
        .collect();
    TabularPolicy::new(probs).unwrap()
}

pub fn random_q(rng: &mut impl RngCore, d: usize, scale: f64, radius: f64) -> LinearQ<f64> {
    LinearQ {
        theta: vec_in(rng, d, -scale, scale),
        radius,
    }
}

pub fn random_linear_tau(rng: &mut impl RngCore, d: usize, cap: f64, scale: f64) -> TauModel<f64> {
    let mut t = LinearTau::unit(d, cap);
    for p in &mut t.params {
        *p += uniform(rng, -scale, scale);
    }
    TauModel::Linear(t)
}

pub fn random_network_tau(rng: &mut impl RngCore, d: usize, width: usize, cap: f64, scale: f64) -> TauModel<f64> {
    let mut t = TauNetwork::init(d, width, cap, rng);
    for p in &mut t.params {
        *p += uniform(rng, -scale, scale);
    }
    TauModel::Network(t)
}

/// max_k |a_k − b_k| / max(|a_k|, |b_k|, floor).
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect()
}
