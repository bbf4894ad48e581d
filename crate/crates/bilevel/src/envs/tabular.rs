use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::approx::TabularPolicy;
use crate::core::seeded_rng;
use crate::error::{Error, Result};

/// Finite MDP {S, A, P, γ, r, s⁰}; states are encoded as `[id as f64]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMDP {
    pub num_states: usize,
    pub num_actions: usize,
    /// P[s][a][s'].
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// r[s][a] ∈ [0, R̄].
    pub rewards: Vec<Vec<f64>>,
    pub gamma: f64,
    pub initial_state: usize,
}

impl TabularMDP {
    pub fn new(transitions: Vec<Vec<Vec<f64>>>, rewards: Vec<Vec<f64>>, gamma: f64, initial_state: usize) -> Result<Self> {
        let s = transitions.len();
        let a = transitions.first().map(|r| r.len()).unwrap_or(0);
        if s == 0 || a == 0 {
            return Err(Error::Schema("MDP needs states and actions".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Schema(format!("gamma {gamma} not in [0, 1)")));
        }
        if initial_state >= s || rewards.len() != s {
            return Err(Error::Schema("inconsistent MDP sizes".into()));
        }
        for si in 0..s {
            if transitions[si].len() != a || rewards[si].len() != a {
                return Err(Error::Schema(format!("state {si}: ragged tables")));
            }
            for ai in 0..a {
                let row = &transitions[si][ai];
                let z: f64 = row.iter().sum();
                if row.len() != s || row.iter().any(|&p| p < 0.0) || (z - 1.0).abs() > 1e-12 {
                    return Err(Error::Schema(format!("P[{si}][{ai}] is not a distribution")));
                }
                let r = rewards[si][ai];
                if !(r.is_finite() && r >= 0.0) {
                    return Err(Error::Schema(format!("r[{si}][{ai}] = {r} must be finite and >= 0")));
                }
            }
        }
        Ok(Self {
            num_states: s,
            num_actions: a,
            transitions,
            rewards,
            gamma,
            initial_state,
        })
    }

    pub fn max_reward(&self) -> f64 {
        self.rewards.iter().flatten().fold(0.0, |m, &r| m.max(r))
    }

    /// P^π as a state-to-state matrix and r^π as a vector.
    fn induced(&self, pi: &TabularPolicy<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if pi.num_states() != self.num_states || pi.num_actions() != self.num_actions {
            return Err(Error::Schema("policy shape does not match the MDP".into()));
        }
        let n = self.num_states;
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for s in 0..n {
            for a in 0..self.num_actions {
                let w = pi.probs[s][a];
                r[s] += w * self.rewards[s][a];
                for sp in 0..n {
                    p[(s, sp)] += w * self.transitions[s][a][sp];
                }
            }
        }
        Ok((p, r))
    }

    /// v^π from (I − γP^π) v = r^π.
    pub fn policy_values(&self, pi: &TabularPolicy<f64>) -> Result<Vec<f64>> {
        let (p, r) = self.induced(pi)?;
        let n = self.num_states;
        let a = DMatrix::identity(n, n) - p * self.gamma;
        let v = a
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Numeric("singular policy-evaluation system".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// q^π(s, a) = r(s, a) + γ Σ P(s'|s, a) v^π(s').
    pub fn q_values(&self, pi: &TabularPolicy<f64>) -> Result<Vec<Vec<f64>>> {
        let v = self.policy_values(pi)?;
        Ok((0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| {
                        let ev: f64 = self.transitions[s][a].iter().zip(&v).map(|(p, v)| p * v).sum();
                        self.rewards[s][a] + self.gamma * ev
                    })
                    .collect()
            })
            .collect())
    }

    /// Normalised discounted occupancy d_π(s, a) = (1−γ) Σ_t γ^t P(s_t = s, a_t = a).
    pub fn occupancy(&self, pi: &TabularPolicy<f64>) -> Result<Vec<Vec<f64>>> {
        let (p, _) = self.induced(pi)?;
        let n = self.num_states;
        // d_s solves (I − γ P^πᵀ) d = (1 − γ) e_{s⁰}
        let a = DMatrix::identity(n, n) - p.transpose() * self.gamma;
        let mut b = DVector::zeros(n);
        b[self.initial_state] = 1.0 - self.gamma;
        let ds = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numeric("singular occupancy system".into()))?;
        Ok((0..n)
            .map(|s| (0..self.num_actions).map(|a| ds[s] * pi.probs[s][a]).collect())
            .collect())
    }

    /// Uniform random MDP with Dirichlet(1) transition rows and U[0,1] rewards.
    pub fn random(num_states: usize, num_actions: usize, gamma: f64, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut transitions = Vec::with_capacity(num_states);
        let mut rewards = Vec::with_capacity(num_states);
        for _ in 0..num_states {
            let mut rows = Vec::with_capacity(num_actions);
            let mut rs = Vec::with_capacity(num_actions);
            for _ in 0..num_actions {
                // exponential spacings give a flat Dirichlet
                let mut row: Vec<f64> = (0..num_states).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let z: f64 = row.iter().sum();
                row.iter_mut().for_each(|p| *p /= z);
                let fix = 1.0 - row.iter().sum::<f64>();
                row[0] += fix;
                rows.push(row);
                rs.push(rng.random::<f64>());
            }
            transitions.push(rows);
            rewards.push(rs);
        }
        Self::new(transitions, rewards, gamma, 0)
    }
}

impl Environment for TabularMDP {
    fn state_dim(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.initial_state as f64]
    }

    fn sample_initial(&self, _rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.initial_state()
    }

    fn step(&self, s: &[f64], a: usize, rng: &mut dyn rand::RngCore) -> (f64, Vec<f64>) {
        let si = s[0] as usize;
        let u: f64 = rng.random();
        let row = &self.transitions[si][a];
        let mut acc = 0.0;
        let mut next = row.len() - 1;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        (self.rewards[si][a], vec![next as f64])
    }

    fn reward_bound(&self) -> f64 {
        self.max_reward()
    }
}

/// 2×2 grid: states 0..3 laid out row-major, goal in the bottom-right
/// corner (state 3), actions up/down/left/right. Each move goes in the
/// intended direction with probability 1 − slip, otherwise in a uniformly
/// random direction; moves into a wall stay put. The reward is the
/// probability of landing on the goal.
pub fn gridworld(slip: f64, gamma: f64) -> Result<TabularMDP> {
    let moves: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
    let step = |s: usize, m: (i32, i32)| {
        let (r, c) = ((s / 2) as i32, (s % 2) as i32);
        let (r2, c2) = (r + m.0, c + m.1);
        if (0..2).contains(&r2) && (0..2).contains(&c2) {
            (r2 * 2 + c2) as usize
        } else {
            s
        }
    };
    let mut p = vec![vec![vec![0.0; 4]; 4]; 4];
    for (s, ps) in p.iter_mut().enumerate() {
        for (a, row) in ps.iter_mut().enumerate() {
            row[step(s, moves[a])] += 1.0 - slip;
            for &m in &moves {
                row[step(s, m)] += slip / 4.0;
            }
        }
    }
    let r = p.iter().map(|ps| ps.iter().map(|row| row[3]).collect()).collect();
    TabularMDP::new(p, r, gamma, 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueIterationResult {
    pub q: Vec<Vec<f64>>,
    pub greedy: TabularPolicy<f64>,
    pub iterations: usize,
    /// Sup-norm Bellman residual of the returned q.
    pub residual: f64,
}

/// Value iteration from q = 0 until the sup-norm Bellman residual is at most
/// `tol`, or for at most `max_iters` sweeps when given (early stopping is
/// how sub-optimal behavior policies are produced). Ties in the greedy
/// policy go to the lowest action index.
pub fn value_iteration(m: &TabularMDP, tol: f64, max_iters: Option<usize>) -> ValueIterationResult {
    let (ns, na) = (m.num_states, m.num_actions);
    let mut q = vec![vec![0.0; na]; ns];
    let bellman = |q: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| m.rewards[s][a] + m.gamma * m.transitions[s][a].iter().zip(&v).map(|(p, v)| p * v).sum::<f64>())
                    .collect()
            })
            .collect()
    };
    let residual_of = |q: &Vec<Vec<f64>>, tq: &Vec<Vec<f64>>| {
        q.iter()
            .flatten()
            .zip(tq.iter().flatten())
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    };
    let cap = max_iters.unwrap_or(usize::MAX);
    let mut iterations = 0;
    let mut tq = bellman(&q);
    let mut residual = residual_of(&q, &tq);
    while residual > tol && iterations < cap {
        q = tq;
        tq = bellman(&q);
        residual = residual_of(&q, &tq);
        iterations += 1;
    }
    let probs = q
        .iter()
        .map(|row| {
            let mut best = 0;
            for (a, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = a;
                }
            }
            let mut p = vec![0.0; na];
            p[best] = 1.0;
            p
        })
        .collect();
    ValueIterationResult {
        q,
        greedy: TabularPolicy { probs },
        iterations,
        residual,
    }
}

/// π_b(a|s) ∝ exp(q(s, a)/α) with q from value iteration capped at
/// `vi_iters` sweeps (`None` runs to convergence).
pub fn behavior_policy(m: &TabularMDP, alpha: f64, vi_iters: Option<usize>) -> Result<TabularPolicy<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {alpha}")));
    }
    let vi = value_iteration(m, 1e-10, vi_iters);
    let probs =
        vi.q.iter()
            .map(|row| crate::approx::softmax(&row.iter().map(|&x| x / alpha).collect::<Vec<_>>()))
            .collect();
    TabularPolicy::new(probs)
}

/// J(π) = q^π(s⁰, π), solved exactly.
pub fn exact_return(m: &TabularMDP, pi: &TabularPolicy<f64>) -> Result<f64> {
    Ok(m.policy_values(pi)?[m.initial_state])
}

pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}
