use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use crate::approx::{FeatureKind, FeatureMap, LinearQ, LinearTau, Policy, SoftmaxPolicy, TabularPolicy, TauModel, TauNetwork};
use crate::core::{
    substream, Geometry, OfflineDataset, OutputRule, PolicyInit, RoundRecord, StepSchedule, TauModelKind, TrainConfig, TrainTrace,
};
use crate::detection::DetectionFunction;
use crate::error::{Error, Result};
use crate::scalar::{norm, Scalar};

use super::batch::{loss_parts, psi_gradient_with, Batch};
use super::ops::{
    apply_step, behavior_clone, descend_theta, eta_schedule, eta_theory, mirror_policy_update, theory_iterate_weights,
};

/// Full optimizer state at a point of the run.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleState<T> {
    pub q: LinearQ<T>,
    pub tau: TauModel<T>,
    pub pi: Policy<T>,
    pub round: usize,
    pub step: usize,
    pub eta: T,
}

#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    /// The snapshot picked by the run seed.
    pub policy: Policy<T>,
    /// π₁..π_K, the policy after each outer round.
    pub snapshots: Vec<Policy<T>>,
    pub state: SaddleState<T>,
    pub trace: TrainTrace,
    pub output: OutputRule,
}

impl<T: Scalar> TrainOutput<T> {
    /// Value of the run under its output rule: `f` of the selected snapshot,
    /// or the average of `f` over all snapshots for the mixture.
    pub fn evaluate<F: FnMut(&Policy<T>) -> Result<f64>>(&self, mut f: F) -> Result<f64> {
        match self.output {
            OutputRule::RandomSnapshot => f(&self.policy),
            OutputRule::Mixture => {
                let mut acc = 0.0;
                for p in &self.snapshots {
                    acc += f(p)?;
                }
                Ok(acc / self.snapshots.len() as f64)
            }
        }
    }
}

/// Scores a snapshot policy, e.g. by a Monte Carlo return.
pub type Evaluator<'a, T> = Box<dyn FnMut(&Policy<T>) -> Result<f64> + 'a>;

/// Optional inputs to [`train_with`].
#[derive(Default)]
pub struct TrainHooks<'a, T> {
    /// Overrides `config.policy_init`.
    pub initial_policy: Option<Policy<T>>,
    /// Called on each snapshot; the value lands in the trace's `mc_return`.
    pub evaluator: Option<Evaluator<'a, T>>,
}

/// The starting policy implied by the feature map and config: tabular for
/// tabular features, softmax on `fm` otherwise.
pub fn initial_policy<T: Scalar>(ds: &OfflineDataset<T>, fm: &FeatureMap<T>, config: &TrainConfig) -> Result<Policy<T>> {
    match (fm.kind, config.policy_init) {
        (FeatureKind::Tabular, PolicyInit::Uniform) => Ok(Policy::Tabular(TabularPolicy::uniform(fm.num_states, fm.num_actions))),
        (FeatureKind::Tabular, PolicyInit::BehaviorClone) => Ok(Policy::Tabular(behavior_clone(ds, fm)?)),
        (_, PolicyInit::Uniform) => Ok(Policy::Softmax(SoftmaxPolicy::uniform(fm.clone(), T::infinity()))),
        (_, PolicyInit::BehaviorClone) => Err(Error::Config("behavior_clone initialisation needs tabular features".into())),
    }
}

pub fn train<T: Scalar>(
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
    config: &TrainConfig,
) -> Result<TrainOutput<T>> {
    train_with(ds, fm, det, config, TrainHooks::default())
}

pub fn train_with<T: Scalar>(
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
    config: &TrainConfig,
    mut hooks: TrainHooks<'_, T>,
) -> Result<TrainOutput<T>> {
    config.validate()?;
    if fm.num_actions != ds.num_actions() {
        return Err(Error::FeatureMismatch(format!(
            "features have {} actions, dataset {}",
            fm.num_actions,
            ds.num_actions()
        )));
    }
    let cap = T::of(config.tau_cap);
    if (det.domain_cap - cap).abs() > T::of(1e-9) * cap {
        return Err(Error::Config(format!(
            "detection function cap {} differs from tau_cap {}",
            det.domain_cap, config.tau_cap
        )));
    }
    let (c_star, lambda) = (T::of(config.c_star), T::of(config.lambda));
    let (radius, q_lr, zeta, eta0) = (
        T::of(config.q_radius),
        T::of(config.q_lr),
        T::of(config.zeta),
        T::of(config.eta0),
    );
    let d = fm.dim();
    let mut rng = substream(config.seed, 0);

    let mut pi = match hooks.initial_policy.take() {
        Some(p) => p,
        None => initial_policy(ds, fm, config)?,
    };
    let mut q = LinearQ::zeros(d, radius);
    let mut tau = match config.tau_model {
        TauModelKind::Linear => TauModel::Linear(LinearTau::unit(d, cap)),
        TauModelKind::Network => TauModel::Network(TauNetwork::init(d, config.tau_width, cap, &mut rng)),
    };

    let design = fm.design(ds)?;
    let (theta_metric, tau_metric) = match config.geometry {
        Geometry::Euclidean => (None, None),
        Geometry::Diagonal => {
            let moment = feature_moment(&design, ds.len(), d);
            let ridge = T::of(config.ridge);
            let tm: Vec<T> = moment.iter().map(|&m| m + ridge).collect();
            (Some(tm), Some(tau.diagonal_metric(&moment, ridge)))
        }
    };

    let n = ds.len();
    let all_rows: Vec<usize> = (0..n).collect();
    let batch = if config.batch_size == 0 || config.batch_size >= n {
        None
    } else {
        Some(config.batch_size)
    };
    let horizon = config.inner_steps;
    let theory_pick = |rng: &mut crate::core::RngStream| -> Result<usize> {
        let w = theory_iterate_weights(horizon, config.theory_g, config.theory_sigma, config.theory_c1);
        let dist = WeightedIndex::new(&w).map_err(|e| Error::Config(format!("theory schedule weights: {e}")))?;
        Ok(dist.sample(rng) + 1)
    };

    let mut snapshots = Vec::with_capacity(config.outer_rounds);
    let mut rounds = Vec::with_capacity(config.outer_rounds);
    let mut eta = eta0;
    for k in 1..=config.outer_rounds {
        let bt = Batch::with_design(ds, fm, &pi, design.clone())?;
        let pick = match (config.schedule, horizon) {
            (StepSchedule::Theory, h) if h > 0 => Some(theory_pick(&mut rng)?),
            _ => None,
        };
        let mut kept: Option<(Vec<T>, TauModel<T>)> = None;
        for t in 1..=horizon {
            let sampled;
            let rows: &[usize] = match batch {
                None => &all_rows,
                Some(b) => {
                    sampled = rand::seq::index::sample(&mut rng, n, b).into_vec();
                    &sampled
                }
            };
            let taus = bt.taus(&tau, rows);
            descend_theta(
                &bt,
                &taus,
                rows,
                &mut q.theta,
                c_star,
                radius,
                config.q_steps,
                q_lr,
                theta_metric.as_deref(),
                false,
            );
            let (grad, _) = psi_gradient_with(&bt, &q.theta, &tau, rows, &taus, c_star, lambda, det);
            eta = match config.schedule {
                StepSchedule::Decay => eta_schedule(eta0, t),
                StepSchedule::Theory => T::of(eta_theory(t, horizon, config.theory_g, config.theory_sigma, config.theory_c1)),
            };
            apply_step(tau.params_mut(), &grad, eta, tau_metric.as_deref());
            if tau.params().iter().chain(&q.theta).any(|x| !x.is_finite()) {
                return Err(Error::Diverged {
                    round: k,
                    step: t,
                    msg: format!("non-finite parameters; completed rounds:\n{}", partial_trace(&rounds)),
                });
            }
            if pick == Some(t) {
                kept = Some((q.theta.clone(), tau.clone()));
            }
        }
        if let Some((theta, tk)) = kept {
            q.theta = theta;
            tau = tk;
        }

        let taus = bt.taus(&tau, &all_rows);
        let (grad, resid) = psi_gradient_with(&bt, &q.theta, &tau, &all_rows, &taus, c_star, lambda, det);
        let loss = loss_parts(&bt, &q.theta, &taus, &resid, c_star, lambda, det).value;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                round: k,
                step: horizon,
                msg: format!("loss is {loss}; completed rounds:\n{}", partial_trace(&rounds)),
            });
        }
        pi = mirror_policy_update(&pi, &q, fm, zeta)?;
        let mc_return = match hooks.evaluator.as_mut() {
            Some(f) => Some(f(&pi)?),
            None => None,
        };
        rounds.push(RoundRecord {
            round: k,
            loss: loss.to_f64_lossy(),
            grad_norm: norm(&grad).to_f64_lossy(),
            mc_return,
        });
        snapshots.push(pi.clone());
    }

    let mut pick_rng = substream(config.seed, 1);
    let selected = pick_rng.random_range(0..snapshots.len());
    Ok(TrainOutput {
        policy: snapshots[selected].clone(),
        state: SaddleState {
            q,
            tau,
            pi,
            round: config.outer_rounds,
            step: horizon,
            eta,
        },
        snapshots,
        trace: TrainTrace { rounds, selected },
        output: config.output,
    })
}

fn feature_moment<T: Scalar>(design: &[T], n: usize, d: usize) -> Vec<T> {
    let mut m = vec![T::zero(); d];
    for row in design.chunks(d) {
        for (mj, &x) in m.iter_mut().zip(row) {
            *mj = *mj + x * x;
        }
    }
    let nt = T::from_usize_lossy(n);
    m.iter_mut().for_each(|x| *x = *x / nt);
    m
}

fn partial_trace(rounds: &[RoundRecord]) -> String {
    TrainTrace {
        rounds: rounds.to_vec(),
        selected: 0,
    }
    .to_csv()
}
