use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use super::{ActionSampler, Environment};
use crate::core::{seeded_rng, OfflineDataset, Transition};
use crate::error::{Error, Result};

/// Quadratic-reward environment with a known optimum:
///
/// r(s, a) = (a − βᵀs)ᵀ Λ (a − βᵀs),  Λ ≺ 0,  so π*(s) = βᵀs.
///
/// Transitions ignore the action, s' = ρs + N(0, σ_s²I), which keeps the
/// state distribution identical for every policy. Continuous actions are
/// snapped to a uniform grid of `grid_points` values per dimension on
/// `[-action_bound, action_bound]`; the grid is the finite action set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegretEnv {
    /// p × m.
    pub beta: Vec<Vec<f64>>,
    /// m × m, negative definite.
    pub lambda: Vec<Vec<f64>>,
    /// Behavior noise σ₀.
    pub sigma0: f64,
    pub grid_points: usize,
    pub action_bound: f64,
    pub rho: f64,
    pub state_noise: f64,
    pub gamma: f64,
}

impl Default for RegretEnv {
    fn default() -> Self {
        Self {
            beta: vec![vec![1.0]],
            lambda: vec![vec![-1.0]],
            sigma0: 0.5,
            grid_points: 21,
            action_bound: 3.0,
            rho: 0.5,
            state_noise: 0.8,
            gamma: 0.95,
        }
    }
}

impl RegretEnv {
    pub fn state_dim(&self) -> usize {
        self.beta.len()
    }

    pub fn action_dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, m) = (self.state_dim(), self.action_dim());
        if p == 0 || m == 0 || self.beta.iter().any(|r| r.len() != m) || self.lambda.iter().any(|r| r.len() != m) {
            return Err(Error::Config("beta must be p × m and lambda m × m".into()));
        }
        if self.grid_points < 2 || !(self.action_bound > 0.0) {
            return Err(Error::Config("need at least two grid points and a positive bound".into()));
        }
        if !(self.sigma0 > 0.0 && self.state_noise > 0.0) || !(self.rho.abs() < 1.0) {
            return Err(Error::Config("noise scales must be positive and |rho| < 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config("gamma must lie in [0, 1)".into()));
        }
        let l = DMatrix::from_fn(m, m, |i, j| 0.5 * (self.lambda[i][j] + self.lambda[j][i]));
        let top = l.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(top < 0.0) {
            return Err(Error::Config(format!(
                "lambda is not negative definite (top eigenvalue {top})"
            )));
        }
        Ok(())
    }

    pub fn grid_values(&self) -> Vec<f64> {
        let g = self.grid_points;
        (0..g)
            .map(|k| -self.action_bound + 2.0 * self.action_bound * k as f64 / (g - 1) as f64)
            .collect()
    }

    /// Continuous action of grid id `a` (mixed radix, first dimension fastest).
    pub fn action_value(&self, a: usize) -> Vec<f64> {
        let vals = self.grid_values();
        let mut rest = a;
        (0..self.action_dim())
            .map(|_| {
                let k = rest % self.grid_points;
                rest /= self.grid_points;
                vals[k]
            })
            .collect()
    }

    pub fn action_embedding(&self) -> Vec<Vec<f64>> {
        (0..self.num_actions_total()).map(|a| self.action_value(a)).collect()
    }

    fn num_actions_total(&self) -> usize {
        self.grid_points.pow(self.action_dim() as u32)
    }

    /// βᵀs.
    pub fn optimal_continuous(&self, s: &[f64]) -> Vec<f64> {
        (0..self.action_dim())
            .map(|j| s.iter().zip(&self.beta).map(|(x, row)| x * row[j]).sum())
            .collect()
    }

    pub fn reward_continuous(&self, s: &[f64], a: &[f64]) -> f64 {
        let opt = self.optimal_continuous(s);
        let d: Vec<f64> = a.iter().zip(&opt).map(|(x, y)| x - y).collect();
        let mut r = 0.0;
        for (i, di) in d.iter().enumerate() {
            for (j, dj) in d.iter().enumerate() {
                r += di * self.lambda[i][j] * dj;
            }
        }
        r
    }

    pub fn reward(&self, s: &[f64], a: usize) -> f64 {
        self.reward_continuous(s, &self.action_value(a))
    }

    /// Best grid action, lowest id on ties.
    pub fn grid_optimal_action(&self, s: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..self.num_actions_total() {
            let r = self.reward(s, a);
            if r > best.1 {
                best = (a, r);
            }
        }
        best.0
    }

    /// Stationary standard deviation of each state coordinate.
    pub fn stationary_sd(&self) -> f64 {
        self.state_noise / (1.0 - self.rho * self.rho).sqrt()
    }

    /// Fraction of `samples` stationary states whose optimum βᵀs lies inside
    /// the grid's range.
    pub fn grid_coverage(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = seeded_rng(seed);
        let d = Normal::new(0.0, self.stationary_sd()).expect("positive sd");
        let mut inside = 0;
        for _ in 0..samples {
            let s: Vec<f64> = (0..self.state_dim()).map(|_| d.sample(&mut rng)).collect();
            if self.optimal_continuous(&s).iter().all(|x| x.abs() <= self.action_bound) {
                inside += 1;
            }
        }
        inside as f64 / samples.max(1) as f64
    }

    /// Discount-weighted states from `episodes` rollouts of length
    /// `horizon`; valid for every policy because the dynamics ignore the
    /// action.
    pub fn state_sample(&self, episodes: usize, horizon: usize, seed: u64) -> Vec<(f64, Vec<f64>)> {
        let mut rng = seeded_rng(seed);
        let mut out = Vec::with_capacity(episodes * horizon);
        for _ in 0..episodes {
            let mut s = self.initial_state();
            let mut w = 1.0;
            for _ in 0..horizon {
                let (_, sp) = self.step(&s, 0, &mut rng);
                out.push((w, s));
                w *= self.gamma;
                s = sp;
            }
        }
        out
    }

    /// J(π*_grid) − J(π) on a common state sample, with exact expectations
    /// over actions. Nonnegative for every π.
    pub fn grid_regret<P: ActionSampler + ?Sized>(&self, pi: &P, sample: &[(f64, Vec<f64>)], episodes: usize) -> Result<f64> {
        let mut total = 0.0;
        for (w, s) in sample {
            let best = self.reward(s, self.grid_optimal_action(s));
            let probs = pi.action_probs(s)?;
            let exp: f64 = probs.iter().enumerate().map(|(a, p)| p * self.reward(s, a)).sum();
            total += w * (best - exp);
        }
        Ok(total / episodes as f64)
    }

    /// Id of the cell holding `s` when each state coordinate is snapped to
    /// the action grid's values (mixed radix, first coordinate fastest).
    /// With β = 1 in one dimension the cells are exactly the regions where
    /// one grid action is optimal.
    pub fn state_cell(&self, s: &[f64]) -> usize {
        let g = self.grid_points;
        let h = 2.0 * self.action_bound / (g - 1) as f64;
        let mut id = 0;
        let mut radix = 1;
        for &x in s {
            let k = ((x + self.action_bound) / h).round().clamp(0.0, (g - 1) as f64) as usize;
            id += k * radix;
            radix *= g;
        }
        id
    }

    pub fn num_state_cells(&self) -> usize {
        self.grid_points.pow(self.state_dim() as u32)
    }

    /// The same transitions with every state replaced by its cell id, ready
    /// for tabular features.
    pub fn tabularize(&self, ds: &OfflineDataset<f64>) -> Result<OfflineDataset<f64>> {
        let cell = |s: &[f64]| vec![self.state_cell(s) as f64];
        let rows = ds
            .transitions()
            .iter()
            .map(|t| Transition::new(cell(&t.s), t.a, t.r, cell(&t.sp)))
            .collect();
        OfflineDataset::new(rows, cell(ds.initial_state()), ds.num_actions(), ds.discount())
    }
}

/// A policy over state cells acting on raw states.
pub struct CellPolicy<'a, P: ?Sized> {
    pub env: &'a RegretEnv,
    pub policy: &'a P,
}

impl<P: ActionSampler + ?Sized> ActionSampler for CellPolicy<'_, P> {
    fn action_probs(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.policy.action_probs(&[self.env.state_cell(s) as f64])
    }
}

impl Environment for RegretEnv {
    fn state_dim(&self) -> usize {
        self.beta.len()
    }

    fn num_actions(&self) -> usize {
        self.num_actions_total()
    }

    fn gamma(&self) -> f64 {
        self.gamma
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.beta.len()]
    }

    fn step(&self, s: &[f64], a: usize, rng: &mut dyn RngCore) -> (f64, Vec<f64>) {
        let d = Normal::new(0.0, self.state_noise).expect("positive sd");
        let sp = s.iter().map(|x| self.rho * x + d.sample(rng)).collect();
        (self.reward(s, a), sp)
    }

    fn reward_bound(&self) -> f64 {
        // |r| grows without bound in s; report the grid-range worst case at
        // three stationary standard deviations.
        let reach = self.action_bound + 3.0 * self.stationary_sd() * self.beta.iter().flatten().map(|b| b.abs()).sum::<f64>();
        let lmax = self.lambda.iter().flatten().map(|x| x.abs()).sum::<f64>();
        lmax * reach * reach
    }
}

/// a = βᵀs + N(0, σ₀²I), snapped to the nearest grid point.
#[derive(Clone, Debug)]
pub struct RegretBehavior {
    pub env: RegretEnv,
}

impl RegretBehavior {
    fn cell_probs(&self, center: f64) -> Vec<f64> {
        let vals = self.env.grid_values();
        let h = vals[1] - vals[0];
        let nd = NormalDist::new(center, self.env.sigma0).expect("positive sd");
        let g = vals.len();
        (0..g)
            .map(|k| {
                let lo = if k == 0 { f64::NEG_INFINITY } else { vals[k] - 0.5 * h };
                let hi = if k + 1 == g { f64::INFINITY } else { vals[k] + 0.5 * h };
                (nd.cdf(hi) - nd.cdf(lo)).max(0.0)
            })
            .collect()
    }
}

impl ActionSampler for RegretBehavior {
    fn action_probs(&self, s: &[f64]) -> Result<Vec<f64>> {
        let opt = self.env.optimal_continuous(s);
        let per_dim: Vec<Vec<f64>> = opt.iter().map(|&c| self.cell_probs(c)).collect();
        let g = self.env.grid_points;
        let total = self.env.num_actions_total();
        let mut p: Vec<f64> = (0..total)
            .map(|a| {
                let mut rest = a;
                per_dim
                    .iter()
                    .map(|row| {
                        let k = rest % g;
                        rest /= g;
                        row[k]
                    })
                    .product()
            })
            .collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        Ok(p)
    }

    fn sample_action(&self, s: &[f64], rng: &mut dyn RngCore) -> Result<usize> {
        let d = Normal::new(0.0, self.env.sigma0).expect("positive sd");
        let vals = self.env.grid_values();
        let h = vals[1] - vals[0];
        let g = self.env.grid_points;
        let mut id = 0;
        let mut radix = 1;
        for c in self.env.optimal_continuous(s) {
            let x = c + d.sample(rng);
            let k = ((x + self.env.action_bound) / h).round().clamp(0.0, (g - 1) as f64) as usize;
            id += k * radix;
            radix *= g;
        }
        Ok(id)
    }
}

/// Monte Carlo return of the analytic optimum from s⁰. With `on_grid` the
/// policy plays the best grid action instead of βᵀs.
pub fn regret_env_optimal_return(env: &RegretEnv, samples: usize, horizon: usize, seed: u64, on_grid: bool) -> Result<f64> {
    if samples == 0 {
        return Err(Error::Config("samples must be >= 1".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let mut s = env.initial_state();
        let mut disc = 1.0;
        for _ in 0..horizon {
            let r = if on_grid {
                env.reward(&s, env.grid_optimal_action(&s))
            } else {
                env.reward_continuous(&s, &env.optimal_continuous(&s))
            };
            total += disc * r;
            disc *= env.gamma;
            let (_, sp) = env.step(&s, 0, &mut rng);
            s = sp;
        }
    }
    Ok(total / samples as f64)
}
