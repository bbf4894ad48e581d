use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ActionSampler, Environment};
use crate::approx::softmax;
use crate::error::{Error, Result};

/// How the vector-valued cubic term of the reward is reduced to a scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardReading {
    /// ((s'ᵀs')^{3/2}) · (h₁ + h₂): the scalar norm term scales the
    /// coefficient vector, whose entries are then summed.
    #[default]
    NormCubed,
    /// Σ_k h_k |s'_k|³: the power acts coordinate-wise before the
    /// Hadamard product.
    Coordinatewise,
}

/// Two-dimensional continuous state, binary action:
///
/// s' = diag(0.75(2a−1), 0.75(1−2a)) s + [[0,1],[1,0]] ⊙ (s sᵀ) 𝟙 + ε,
/// r  = wᵀs' − c(2a−1) + cubic(s'),  ε ~ N(0, σ²I), s⁰ ~ N(0, σ₀²I).
///
/// The cross term s₁s₂ can make trajectories diverge, so states are clipped
/// to `[-state_clip, state_clip]` coordinate-wise after every step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixDynamicsEnv {
    pub gain: f64,
    pub noise_var: f64,
    pub init_var: f64,
    pub linear_reward: [f64; 2],
    pub action_reward: f64,
    pub cubic_reward: [f64; 2],
    pub reading: RewardReading,
    pub state_clip: f64,
    pub gamma: f64,
}

impl Default for MatrixDynamicsEnv {
    fn default() -> Self {
        Self {
            gain: 0.75,
            noise_var: 0.25,
            init_var: 0.25,
            linear_reward: [2.0, 1.0],
            action_reward: 0.25,
            cubic_reward: [0.25, 0.5],
            reading: RewardReading::NormCubed,
            state_clip: 5.0,
            gamma: 0.95,
        }
    }
}

impl MatrixDynamicsEnv {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_var > 0.0 && self.init_var > 0.0) {
            return Err(Error::Config("noise covariances must be positive definite".into()));
        }
        if !(self.state_clip > 0.0) || !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("state_clip must be positive and gamma in [0, 1)".into()));
        }
        Ok(())
    }

    /// Next state before noise.
    pub fn mean_next(&self, s: &[f64], a: usize) -> [f64; 2] {
        let sign = 2.0 * a as f64 - 1.0;
        let cross = s[0] * s[1];
        [self.gain * sign * s[0] + cross, -self.gain * sign * s[1] + cross]
    }

    pub fn reward(&self, sp: &[f64], a: usize) -> f64 {
        let sign = 2.0 * a as f64 - 1.0;
        let lin = self.linear_reward[0] * sp[0] + self.linear_reward[1] * sp[1];
        let cubic = match self.reading {
            RewardReading::NormCubed => (sp[0] * sp[0] + sp[1] * sp[1]).powf(1.5) * (self.cubic_reward[0] + self.cubic_reward[1]),
            RewardReading::Coordinatewise => {
                self.cubic_reward[0] * sp[0].abs().powi(3) + self.cubic_reward[1] * sp[1].abs().powi(3)
            }
        };
        lin - self.action_reward * sign + cubic
    }

    fn clip(&self, x: f64) -> f64 {
        x.clamp(-self.state_clip, self.state_clip)
    }
}

impl Environment for MatrixDynamicsEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0, 0.0]
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let d = Normal::new(0.0, self.init_var.sqrt()).expect("positive variance");
        vec![d.sample(rng), d.sample(rng)]
    }

    fn step(&self, s: &[f64], a: usize, rng: &mut dyn RngCore) -> (f64, Vec<f64>) {
        let d = Normal::new(0.0, self.noise_var.sqrt()).expect("positive variance");
        let m = self.mean_next(s, a);
        let sp = vec![self.clip(m[0] + d.sample(rng)), self.clip(m[1] + d.sample(rng))];
        (self.reward(&sp, a), sp)
    }

    fn reward_bound(&self) -> f64 {
        let c = self.state_clip;
        let lin = (self.linear_reward[0].abs() + self.linear_reward[1].abs()) * c;
        let cubic = (2.0 * c * c).powf(1.5) * (self.cubic_reward[0].abs() + self.cubic_reward[1].abs());
        lin + self.action_reward.abs() + cubic
    }
}

/// Temperature softmax over the one-step reward at the noiseless next
/// state: π_b(a|s) ∝ exp(r(m(s, a), a)/α).
#[derive(Clone, Debug)]
pub struct MatrixBehavior {
    pub env: MatrixDynamicsEnv,
    pub alpha: f64,
}

impl ActionSampler for MatrixBehavior {
    fn action_probs(&self, s: &[f64]) -> Result<Vec<f64>> {
        let logits: Vec<f64> = (0..2)
            .map(|a| {
                let m = self.env.mean_next(s, a);
                let m = [self.env.clip(m[0]), self.env.clip(m[1])];
                self.env.reward(&m, a) / self.alpha
            })
            .collect();
        Ok(softmax(&logits))
    }
}
