//! Simulated environments, behavior policies, dataset generation and
//! return oracles.

mod matrix;
mod regret;
mod tabular;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use matrix::{MatrixBehavior, MatrixDynamicsEnv, RewardReading};
pub use regret::{regret_env_optimal_return, CellPolicy, RegretBehavior, RegretEnv};
pub use tabular::{behavior_policy, entropy, exact_return, gridworld, value_iteration, TabularMDP, ValueIterationResult};

use crate::approx::Policy;
use crate::core::{seeded_rng, OfflineDataset, Transition};
use crate::error::{Error, Result};

/// A simulator with a finite action set.
pub trait Environment: Sync {
    fn state_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn gamma(&self) -> f64;
    /// The single s⁰ recorded in datasets.
    fn initial_state(&self) -> Vec<f64>;
    /// A draw from the start distribution used for rollouts. Defaults to
    /// the fixed s⁰.
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let _ = rng;
        self.initial_state()
    }
    fn step(&self, s: &[f64], a: usize, rng: &mut dyn RngCore) -> (f64, Vec<f64>);
    /// R̄ with |r| ≤ R̄, used in the truncation-bias bound.
    fn reward_bound(&self) -> f64;
}

/// Anything that can act: learned policies and hand-built behavior policies.
pub trait ActionSampler: Sync {
    fn action_probs(&self, s: &[f64]) -> Result<Vec<f64>>;

    fn sample_action(&self, s: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        let p = self.action_probs(s)?;
        Ok(sample_categorical(&p, rng.random()))
    }
}

impl ActionSampler for Policy<f64> {
    fn action_probs(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.probs(s)
    }
}

impl ActionSampler for crate::approx::TabularPolicy<f64> {
    fn action_probs(&self, s: &[f64]) -> Result<Vec<f64>> {
        Ok(self.row(s)?.to_vec())
    }
}

/// Inverse-CDF draw; `u` in [0, 1).
pub fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass: take the last positive entry
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Rolls `pi_b` from fresh start states in episodes of length `horizon`
/// until `n` transitions are collected.
pub fn generate_dataset<E: Environment + ?Sized, P: ActionSampler + ?Sized>(
    env: &E,
    pi_b: &P,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<OfflineDataset<f64>> {
    if n == 0 || horizon == 0 {
        return Err(Error::Config("n and horizon must be positive".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut s = env.sample_initial(&mut rng);
    let mut t = 0;
    while rows.len() < n {
        let a = pi_b.sample_action(&s, &mut rng)?;
        let (r, sp) = env.step(&s, a, &mut rng);
        rows.push(Transition::new(s, a, r, sp.clone()));
        t += 1;
        if t >= horizon {
            s = env.sample_initial(&mut rng);
            t = 0;
        } else {
            s = sp;
        }
    }
    OfflineDataset::new(rows, env.initial_state(), env.num_actions(), env.gamma())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub episodes: usize,
    /// R̄·γ^H/(1−γ): the most the truncated sum can miss.
    pub truncation_bias_bound: f64,
}

/// Average truncated discounted return over `episodes` rollouts.
pub fn mc_return<E: Environment + ?Sized, P: ActionSampler + ?Sized>(
    env: &E,
    pi: &P,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<McEstimate> {
    if episodes == 0 {
        return Err(Error::Config("episodes must be >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let g = env.gamma();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = env.sample_initial(&mut rng);
        let (mut ret, mut disc) = (0.0, 1.0);
        for _ in 0..horizon {
            let a = pi.sample_action(&s, &mut rng)?;
            let (r, sp) = env.step(&s, a, &mut rng);
            ret += disc * r;
            disc *= g;
            s = sp;
        }
        returns.push(ret);
    }
    let m = returns.len() as f64;
    // shifted by the first return so identical returns give an exact mean
    let shift = returns[0];
    let mean = shift + returns.iter().map(|r| r - shift).sum::<f64>() / m;
    let var = if episodes > 1 {
        returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        stderr: (var / m).sqrt(),
        episodes,
        truncation_bias_bound: env.reward_bound() * g.powi(horizon as i32) / (1.0 - g),
    })
}

/// Environment descriptor for serialisation and the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum EnvDescriptor {
    Gridworld { slip: f64, gamma: f64 },
    Tabular(TabularMDP),
    Matrix(MatrixDynamicsEnv),
    Regret(RegretEnv),
}

impl EnvDescriptor {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvDescriptor::Gridworld { slip, gamma } => Box::new(gridworld(*slip, *gamma)?),
            EnvDescriptor::Tabular(m) => Box::new(m.clone()),
            EnvDescriptor::Matrix(m) => Box::new(m.clone()),
            EnvDescriptor::Regret(m) => Box::new(m.clone()),
        })
    }

    pub fn tabular(&self) -> Option<TabularMDP> {
        match self {
            EnvDescriptor::Gridworld { slip, gamma } => gridworld(*slip, *gamma).ok(),
            EnvDescriptor::Tabular(m) => Some(m.clone()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::TabularPolicy;

    #[test]
    fn dataset_is_deterministic() {
        let m = gridworld(0.1, 0.95).unwrap();
        let pb = behavior_policy(&m, 0.5, Some(3)).unwrap();
        let a = generate_dataset(&m, &pb, 1500, 100, 9).unwrap();
        let b = generate_dataset(&m, &pb, 1500, 100, 9).unwrap();
        assert_eq!(a.len(), 1500);
        assert_eq!(a.discount(), 0.95);
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn zero_horizon_return_is_zero() {
        let m = gridworld(0.1, 0.95).unwrap();
        let pi = TabularPolicy::<f64>::uniform(4, 4);
        assert_eq!(mc_return(&m, &pi, 10, 0, 1).unwrap().mean, 0.0);
    }

    #[test]
    fn deterministic_env_has_zero_stderr() {
        let p = vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]];
        let r = vec![vec![1.0], vec![0.5]];
        let m = TabularMDP::new(p, r, 0.9, 0).unwrap();
        let pi = TabularPolicy::<f64>::uniform(2, 1);
        assert_eq!(mc_return(&m, &pi, 50, 30, 2).unwrap().stderr, 0.0);
    }

    #[test]
    fn categorical_edges() {
        assert_eq!(sample_categorical(&[0.5, 0.5], 0.0), 0);
        assert_eq!(sample_categorical(&[0.5, 0.5], 0.75), 1);
        assert_eq!(sample_categorical(&[0.3, 0.7, 0.0], 0.999_999_999_999_999_9), 1);
    }
}
