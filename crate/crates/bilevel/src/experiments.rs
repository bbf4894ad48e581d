//! Desk-scale experiment drivers: regret rate, interval coverage, baseline
//! improvement across exploration levels, hyperparameter sensitivity and the
//! relative condition number. Everything here works in `f64`.
//!
//! Every driver is a pure function of its spec. Replications run on the
//! rayon pool and are merged in input order, so outputs do not depend on the
//! number of threads.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::approx::{FeatureMap, Policy, TabularPolicy};
use crate::core::{seeded_rng, Geometry, OfflineDataset, OutputRule, PolicyInit, TrainConfig};
use crate::detection::DetectionFunction;
use crate::envs::{
    behavior_policy, exact_return, generate_dataset, ActionSampler, CellPolicy, EnvDescriptor, Environment, RegretBehavior,
    RegretEnv, TabularMDP,
};
use crate::error::{Error, Result};
use crate::ope::{confidence_interval, CiConfig};
use crate::optimizer::{hyperparam_rule, train};

/// Version tag written into run manifests.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Trainer settings used by the experiments unless a spec overrides them.
pub fn experiment_train_config() -> TrainConfig {
    TrainConfig {
        q_lr: 1e-3,
        eta0: 1e-2,
        tau_cap: 100.0,
        outer_rounds: 10,
        inner_steps: 1000,
        zeta: 1.0,
        q_radius: 1000.0,
        geometry: Geometry::Diagonal,
        output: OutputRule::Mixture,
        policy_init: PolicyInit::BehaviorClone,
        ..TrainConfig::default()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn tabular_return(m: &TabularMDP, p: &Policy<f64>) -> Result<f64> {
    match p {
        Policy::Tabular(t) => exact_return(m, t),
        Policy::Softmax(_) => Err(Error::Config("exact returns need a tabular policy".into())),
    }
}

/// Trains with `cfg` and scores the result with the exact return.
fn train_tabular(m: &TabularMDP, ds: &OfflineDataset<f64>, cfg: &TrainConfig) -> Result<f64> {
    let fm = FeatureMap::tabular(m.num_states, m.num_actions);
    let det = DetectionFunction::quadratic(cfg.tau_cap);
    let out = train(ds, &fm, &det, cfg)?;
    out.evaluate(|p| tabular_return(m, p))
}

/// λ = c* from the selection rule with V̄ = R̄/(1−γ).
fn rule_for(n: usize, dim: usize, reward_bound: f64, gamma: f64) -> Result<(f64, f64)> {
    hyperparam_rule(n, dim, reward_bound / (1.0 - gamma))
}

// ---------------------------------------------------------------- regret

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegretSweepSpec {
    pub env: RegretEnv,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    /// Length of the behavior episodes that make up a dataset.
    pub episode_length: usize,
    pub train: TrainConfig,
    /// Set λ = c* by the selection rule; otherwise `train.lambda`/`c_star`.
    pub use_rule: bool,
    /// d in the selection rule; defaults to the number of state cells.
    pub rule_dim: Option<usize>,
    pub eval_episodes: usize,
    pub eval_horizon: usize,
    pub eval_seed: u64,
}

impl Default for RegretSweepSpec {
    fn default() -> Self {
        Self {
            env: RegretEnv::default(),
            n_grid: vec![250, 500, 1000, 2000, 4000],
            seeds: 20,
            episode_length: 100,
            train: TrainConfig {
                inner_steps: 300,
                ..experiment_train_config()
            },
            use_rule: true,
            rule_dim: None,
            eval_episodes: 40,
            eval_horizon: 100,
            eval_seed: 12345,
        }
    }
}

impl RegretSweepSpec {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be nonempty and strictly increasing".into()));
        }
        if self.seeds == 0 || self.episode_length == 0 || self.eval_episodes == 0 || self.eval_horizon == 0 {
            return Err(Error::Config("seeds, episode_length and eval sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub n: usize,
    pub seed: u64,
    pub lambda: f64,
    pub c_star: f64,
    pub regret: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    /// Seeds that finished.
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretTable {
    pub rows: Vec<RegretRow>,
    pub summary: Vec<RegretSummary>,
    /// Regret of the behavior policy on the same state sample.
    pub behavior_regret: f64,
}

impl RegretTable {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.summary.iter().map(|s| (s.n as f64, s.mean)).collect()
    }
}

/// Regret J(π*_grid) − J(π̂) across sample sizes.
///
/// Each dataset is rolled from the continuous behavior, then every state is
/// snapped to its cell (see [`RegretEnv::state_cell`]) and the trainer runs
/// on tabular features over cells, starting from the cloned behavior.
/// Seed k uses data seed `train.seed + k` at every n, so the datasets are
/// nested prefixes. A failed cell is recorded and the sweep moves on.
pub fn regret_sweep(spec: &RegretSweepSpec) -> Result<RegretTable> {
    spec.validate()?;
    let env = &spec.env;
    let sample = env.state_sample(spec.eval_episodes, spec.eval_horizon, spec.eval_seed);
    let pb = RegretBehavior { env: env.clone() };
    let behavior_regret = env.grid_regret(&pb, &sample, spec.eval_episodes)?;
    let fm = FeatureMap::tabular(env.num_state_cells(), env.num_actions());

    let jobs: Vec<(usize, u64)> = spec
        .n_grid
        .iter()
        .flat_map(|&n| (0..spec.seeds as u64).map(move |k| (n, spec.train.seed + k)))
        .collect();
    let rows: Vec<RegretRow> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let (lambda, c_star) = if spec.use_rule {
                match rule_for(
                    n,
                    spec.rule_dim.unwrap_or(env.num_state_cells()),
                    env.reward_bound(),
                    env.gamma,
                ) {
                    Ok(v) => v,
                    Err(e) => {
                        return RegretRow {
                            n,
                            seed,
                            lambda: f64::NAN,
                            c_star: f64::NAN,
                            regret: None,
                            error: Some(e.to_string()),
                        }
                    }
                }
            } else {
                (spec.train.lambda, spec.train.c_star)
            };
            let run = || -> Result<f64> {
                let raw = generate_dataset(env, &pb, n, spec.episode_length, seed)?;
                let ds = env.tabularize(&raw)?;
                let cfg = TrainConfig {
                    lambda,
                    c_star,
                    seed,
                    ..spec.train.clone()
                };
                let det = DetectionFunction::quadratic(cfg.tau_cap);
                let out = train(&ds, &fm, &det, &cfg)?;
                out.evaluate(|p| env.grid_regret(&CellPolicy { env, policy: p }, &sample, spec.eval_episodes))
            };
            let (regret, error) = match run() {
                Ok(r) => (Some(r), None),
                Err(e) => {
                    log::warn!("regret cell n={n} seed={seed} failed: {e}");
                    (None, Some(e.to_string()))
                }
            };
            RegretRow {
                n,
                seed,
                lambda,
                c_star,
                regret,
                error,
            }
        })
        .collect();

    let summary = spec
        .n_grid
        .iter()
        .map(|&n| {
            let xs: Vec<f64> = rows.iter().filter(|r| r.n == n).filter_map(|r| r.regret).collect();
            let (mean, sd) = mean_std(&xs);
            RegretSummary {
                n,
                mean,
                stderr: sd / (xs.len() as f64).sqrt(),
                runs: xs.len(),
            }
        })
        .collect();
    Ok(RegretTable {
        rows,
        summary,
        behavior_regret,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Points left out because their regret was not positive.
    pub dropped: usize,
}

/// Least-squares fit of log(regret) on log(n).
pub fn slope_fit(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let kept: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, r)| *n > 0.0 && *r > 0.0 && r.is_finite())
        .map(|&(n, r)| (n.ln(), r.ln()))
        .collect();
    let dropped = points.len() - kept.len();
    if dropped > 0 {
        log::warn!("slope_fit dropped {dropped} rows with nonpositive regret");
    }
    if kept.len() < 3 {
        return Err(Error::Degenerate(format!(
            "slope_fit needs 3 positive points, got {}",
            kept.len()
        )));
    }
    let m = kept.len() as f64;
    let mx = kept.iter().map(|p| p.0).sum::<f64>() / m;
    let my = kept.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = kept.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = kept.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = kept.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all n values are equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        r2,
        dropped,
    })
}

/// Number of consecutive steps along `means` that decrease.
pub fn decreasing_steps(means: &[f64]) -> usize {
    means.windows(2).filter(|w| w[1] < w[0]).count()
}

// -------------------------------------------------------------- coverage

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// Seed of the random MDP.
    pub mdp_seed: u64,
    pub behavior_alpha: f64,
    pub target_alpha: f64,
    pub n: usize,
    pub reps: usize,
    pub delta: f64,
    pub lambda: f64,
    pub episode_length: usize,
    pub ci: CiConfig,
    pub seed: u64,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        Self {
            num_states: 5,
            num_actions: 3,
            gamma: 0.9,
            mdp_seed: 7,
            behavior_alpha: 1.0,
            target_alpha: 0.3,
            n: 1000,
            reps: 200,
            delta: 0.1,
            lambda: 1.0,
            episode_length: 50,
            ci: CiConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub rep: usize,
    pub lower: f64,
    pub upper: f64,
    pub sigma_n: f64,
    pub covered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub truth: f64,
    pub coverage: f64,
    pub mean_width: f64,
    /// (1−δ) − 2√(δ(1−δ)/reps).
    pub threshold: f64,
}

impl CoverageReport {
    pub fn passes(&self) -> bool {
        self.coverage >= self.threshold
    }
}

/// Fraction of replications whose interval contains the exact J(π).
///
/// Replication r draws its dataset with seed `seed + r` and bootstraps with
/// the same seed.
pub fn coverage_experiment(spec: &CoverageSpec) -> Result<CoverageReport> {
    if spec.reps == 0 || spec.n == 0 {
        return Err(Error::Config("reps and n must be positive".into()));
    }
    let m = TabularMDP::random(spec.num_states, spec.num_actions, spec.gamma, spec.mdp_seed)?;
    let pb = behavior_policy(&m, spec.behavior_alpha, None)?;
    let target = behavior_policy(&m, spec.target_alpha, None)?;
    let truth = exact_return(&m, &target)?;
    let fm = FeatureMap::tabular(m.num_states, m.num_actions);
    let det = DetectionFunction::quadratic(spec.ci.tau_cap);
    let pi = Policy::Tabular(target);
    let rows = (0..spec.reps)
        .into_par_iter()
        .map(|rep| -> Result<CoverageRow> {
            let seed = spec.seed + rep as u64;
            let ds = generate_dataset(&m, &pb, spec.n, spec.episode_length, seed)?;
            let cfg = CiConfig { seed, ..spec.ci.clone() };
            let ci = confidence_interval(&pi, &ds, &fm, &det, spec.lambda, spec.delta, &cfg)?;
            Ok(CoverageRow {
                rep,
                lower: ci.lower,
                upper: ci.upper,
                sigma_n: ci.sigma_n,
                covered: ci.lower <= truth && truth <= ci.upper,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let reps = rows.len() as f64;
    let coverage = rows.iter().filter(|r| r.covered).count() as f64 / reps;
    let mean_width = rows.iter().map(|r| r.upper - r.lower).sum::<f64>() / reps;
    let d = spec.delta;
    Ok(CoverageReport {
        rows,
        truth,
        coverage,
        mean_width,
        threshold: (1.0 - d) - 2.0 * (d * (1.0 - d) / reps).sqrt(),
    })
}

// ----------------------------------------------------------- exploration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExploreSpec {
    /// Must be tabular.
    pub env: EnvDescriptor,
    pub alphas: Vec<f64>,
    pub n: usize,
    pub seeds: usize,
    pub episode_length: usize,
    /// Value-iteration sweeps behind the behavior policy (`None`: converge).
    pub behavior_vi_iters: Option<usize>,
    pub train: TrainConfig,
    pub use_rule: bool,
    /// d in the selection rule; defaults to the feature dimension |S|·|A|.
    pub rule_dim: Option<usize>,
}

impl Default for ExploreSpec {
    fn default() -> Self {
        Self {
            env: EnvDescriptor::Gridworld { slip: 0.1, gamma: 0.95 },
            alphas: vec![0.1, 0.5, 1.0],
            n: 1500,
            seeds: 20,
            episode_length: 100,
            behavior_vi_iters: Some(3),
            train: experiment_train_config(),
            use_rule: true,
            rule_dim: None,
        }
    }
}

fn tabular_env(env: &EnvDescriptor) -> Result<TabularMDP> {
    env.tabular()
        .ok_or_else(|| Error::Config("this experiment needs a tabular environment".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreRow {
    pub alpha: f64,
    pub seed: u64,
    pub behavior_return: f64,
    pub trained_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub alpha: f64,
    pub behavior_return: f64,
    pub trained_mean: f64,
    pub trained_stderr: f64,
    /// trained_mean ≥ behavior_return − 2·trained_stderr.
    pub improves: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreReport {
    pub rows: Vec<ExploreRow>,
    pub summary: Vec<ExploreSummary>,
}

/// Behavior return against trained return for each behavior temperature.
pub fn exploration_comparison(spec: &ExploreSpec) -> Result<ExploreReport> {
    if spec.alphas.is_empty() || spec.seeds == 0 {
        return Err(Error::Config("need at least one alpha and one seed".into()));
    }
    let m = tabular_env(&spec.env)?;
    let dim = spec.rule_dim.unwrap_or(m.num_states * m.num_actions);
    let (lambda, c_star) = if spec.use_rule {
        rule_for(spec.n, dim, m.max_reward(), m.gamma)?
    } else {
        (spec.train.lambda, spec.train.c_star)
    };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &alpha in &spec.alphas {
        let pb = behavior_policy(&m, alpha, spec.behavior_vi_iters)?;
        let jb = exact_return(&m, &pb)?;
        let cell: Vec<ExploreRow> = (0..spec.seeds as u64)
            .into_par_iter()
            .map(|k| -> Result<ExploreRow> {
                let seed = spec.train.seed + k;
                let ds = generate_dataset(&m, &pb, spec.n, spec.episode_length, seed)?;
                let cfg = TrainConfig {
                    lambda,
                    c_star,
                    seed,
                    ..spec.train.clone()
                };
                Ok(ExploreRow {
                    alpha,
                    seed,
                    behavior_return: jb,
                    trained_return: train_tabular(&m, &ds, &cfg)?,
                })
            })
            .collect::<Result<_>>()?;
        let xs: Vec<f64> = cell.iter().map(|r| r.trained_return).collect();
        let (mean, sd) = mean_std(&xs);
        let stderr = sd / (xs.len() as f64).sqrt();
        summary.push(ExploreSummary {
            alpha,
            behavior_return: jb,
            trained_mean: mean,
            trained_stderr: stderr,
            improves: mean >= jb - 2.0 * stderr,
        });
        rows.extend(cell);
    }
    Ok(ExploreReport { rows, summary })
}

// ----------------------------------------------------------- sensitivity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySpec {
    pub env: EnvDescriptor,
    pub alpha: f64,
    pub behavior_vi_iters: Option<usize>,
    pub lambda_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub n: usize,
    pub seeds: usize,
    pub episode_length: usize,
    pub train: TrainConfig,
    /// d in the selection rule; defaults to |S|·|A|.
    pub rule_dim: Option<usize>,
}

impl Default for SensitivitySpec {
    fn default() -> Self {
        Self {
            env: EnvDescriptor::Gridworld { slip: 0.1, gamma: 0.95 },
            alpha: 0.5,
            behavior_vi_iters: Some(3),
            lambda_grid: vec![2.5, 1.0, 0.1, 0.01],
            c_grid: vec![2.5, 1.0, 0.1, 0.01],
            n: 1500,
            seeds: 10,
            episode_length: 100,
            train: experiment_train_config(),
            rule_dim: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub lambda: f64,
    pub c_star: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Row-major over `lambda_grid` × `c_grid`.
    pub cells: Vec<SensitivityCell>,
    pub rule: SensitivityCell,
    pub best: usize,
    /// best.mean − rule.mean ≤ max(best.std, rule.std).
    pub rule_within_one_std: bool,
}

impl SensitivityReport {
    /// (max − min)/max over the cells with both values in [0.01, 1].
    pub fn mid_grid_spread(&self) -> f64 {
        let mid: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| (0.01..=1.0).contains(&c.lambda) && (0.01..=1.0).contains(&c.c_star))
            .map(|c| c.mean)
            .collect();
        let hi = mid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = mid.iter().copied().fold(f64::INFINITY, f64::min);
        (hi - lo) / hi
    }
}

/// Mean and standard deviation of the trained return over a (λ, c*) grid,
/// plus the cell picked by the selection rule.
pub fn sensitivity_grid(spec: &SensitivitySpec) -> Result<SensitivityReport> {
    if spec.lambda_grid.is_empty() || spec.c_grid.is_empty() || spec.seeds == 0 {
        return Err(Error::Config("grids and seeds must be nonempty".into()));
    }
    let m = tabular_env(&spec.env)?;
    let pb = behavior_policy(&m, spec.alpha, spec.behavior_vi_iters)?;
    let datasets = (0..spec.seeds as u64)
        .map(|k| {
            let seed = spec.train.seed + k;
            Ok((seed, generate_dataset(&m, &pb, spec.n, spec.episode_length, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let run_cell = |lambda: f64, c_star: f64| -> Result<SensitivityCell> {
        let xs = datasets
            .par_iter()
            .map(|(seed, ds)| {
                let cfg = TrainConfig {
                    lambda,
                    c_star,
                    seed: *seed,
                    ..spec.train.clone()
                };
                train_tabular(&m, ds, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean, std) = mean_std(&xs);
        Ok(SensitivityCell {
            lambda,
            c_star,
            mean,
            std,
        })
    };
    let mut cells = Vec::with_capacity(spec.lambda_grid.len() * spec.c_grid.len());
    for &l in &spec.lambda_grid {
        for &c in &spec.c_grid {
            cells.push(run_cell(l, c)?);
        }
    }
    let dim = spec.rule_dim.unwrap_or(m.num_states * m.num_actions);
    let (rl, rc) = rule_for(spec.n, dim, m.max_reward(), m.gamma)?;
    let rule = run_cell(rl, rc)?;
    let best = (0..cells.len())
        .max_by(|&i, &j| cells[i].mean.total_cmp(&cells[j].mean).then(j.cmp(&i)))
        .expect("nonempty grid");
    let within = cells[best].mean - rule.mean <= cells[best].std.max(rule.std);
    Ok(SensitivityReport {
        cells,
        rule,
        best,
        rule_within_one_std: within,
    })
}

// ------------------------------------------------- relative condition number

/// E_μ[φφᵀ] over the dataset's (sᵢ, aᵢ).
pub fn second_moment_dataset(ds: &OfflineDataset<f64>, fm: &FeatureMap<f64>) -> Result<DMatrix<f64>> {
    let d = fm.dim();
    let mut m = DMatrix::zeros(d, d);
    let mut phi = vec![0.0; d];
    for t in ds.transitions() {
        fm.featurize_into(&t.s, t.a, &mut phi)?;
        m.ger(
            1.0,
            &nalgebra::DVector::from_column_slice(&phi),
            &nalgebra::DVector::from_column_slice(&phi),
            1.0,
        );
    }
    Ok(m / ds.len() as f64)
}

/// E_{d_π}[φφᵀ] from `samples` draws of the normalised discounted visitation.
///
/// Each draw rolls π for L steps with P(L = t) = (1−γ)γᵗ and keeps the
/// state-action pair reached, which is an exact draw from d_π.
pub fn second_moment_rollouts<E: Environment + ?Sized, P: ActionSampler + ?Sized>(
    env: &E,
    pi: &P,
    fm: &FeatureMap<f64>,
    samples: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if samples == 0 {
        return Err(Error::Config("samples must be >= 1".into()));
    }
    let g = env.gamma();
    let d = fm.dim();
    let mut rng = seeded_rng(seed);
    let mut acc = DMatrix::zeros(d, d);
    let mut phi = vec![0.0; d];
    for _ in 0..samples {
        let u: f64 = rng.random();
        // ⌊ln U / ln γ⌋ is geometric with success probability 1 − γ
        let len = if g > 0.0 {
            ((1.0 - u).ln() / g.ln()).floor() as usize
        } else {
            0
        };
        let mut s = env.sample_initial(&mut rng);
        for _ in 0..len {
            let a = pi.sample_action(&s, &mut rng)?;
            s = env.step(&s, a, &mut rng).1;
        }
        let a = pi.sample_action(&s, &mut rng)?;
        fm.featurize_into(&s, a, &mut phi)?;
        let v = nalgebra::DVector::from_column_slice(&phi);
        acc.ger(1.0, &v, &v, 1.0);
    }
    Ok(acc / samples as f64)
}

/// Largest λ with A v = λ (B + reg·I) v, for symmetric A and PSD B.
pub fn generalized_top_eigenvalue(a: &DMatrix<f64>, b: &DMatrix<f64>, reg: f64) -> Result<f64> {
    if !(reg >= 0.0) {
        return Err(Error::Config(format!("reg must be >= 0, got {reg}")));
    }
    let d = b.nrows();
    if a.shape() != (d, d) || b.ncols() != d {
        return Err(Error::Index("moment matrices must be square and the same size".into()));
    }
    let bs = (b + b.transpose()) * 0.5 + DMatrix::identity(d, d) * reg;
    let eig = bs.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let low = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(low > 1e-12 * top.max(1e-300)) {
        return Err(Error::Degenerate(format!(
            "E_mu[phi phi^T] + reg I is singular (smallest eigenvalue {low:e}); add a ridge"
        )));
    }
    let l = bs
        .cholesky()
        .ok_or_else(|| Error::Numeric("cholesky of the data moment failed".into()))?;
    let linv = l
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Numeric("triangular inverse failed".into()))?;
    let m = &linv * a * linv.transpose();
    let ms = (&m + m.transpose()) * 0.5;
    Ok(ms.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// ι = max generalised eigenvalue of (E_{d_π}[φφᵀ], E_μ[φφᵀ] + reg·I), with
/// E_{d_π} from rollouts and E_μ from the dataset.
#[allow(clippy::too_many_arguments)]
pub fn relative_condition_number<E: Environment + ?Sized, P: ActionSampler + ?Sized>(
    env: &E,
    pi: &P,
    ds: &OfflineDataset<f64>,
    fm: &FeatureMap<f64>,
    reg: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let a = second_moment_rollouts(env, pi, fm, samples, seed)?;
    let b = second_moment_dataset(ds, fm)?;
    generalized_top_eigenvalue(&a, &b, reg)
}

/// Exact E_{d_π}[φφᵀ] for tabular features, from the occupancy measure.
pub fn second_moment_exact(m: &TabularMDP, pi: &TabularPolicy<f64>) -> Result<DMatrix<f64>> {
    let occ = m.occupancy(pi)?;
    let (ns, na) = (m.num_states, m.num_actions);
    let mut out = DMatrix::zeros(ns * na, ns * na);
    for (s, row) in occ.iter().enumerate() {
        for (a, &p) in row.iter().enumerate() {
            out[(s * na + a, s * na + a)] = p;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------- output

/// What a CLI run produced and how to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seeds: Vec<u64>, outputs: Vec<String>) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash: config_hash(config)?,
            seeds,
            version: VERSION.to_string(),
            outputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// SHA-256 of the config's JSON form.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let json = serde_json::to_string(config).map_err(|e| Error::Schema(e.to_string()))?;
    let digest = Sha256::digest(json.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `rows` as CSV with a header taken from the field names.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Schema(format!("{}: {other:?}", path.display())),
    }
}
