//! Off-policy evaluation: the robust value interval and its finite-sample
//! confidence version with closed-form suprema over linear q-classes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{project_ball_in_place, FeatureMap, LinearQ, LinearTau, Policy, TabularPolicy, TauModel, TauNetwork};
use crate::core::{substream, Geometry, OfflineDataset, TauModelKind};
use crate::detection::DetectionFunction;
use crate::envs::TabularMDP;
use crate::error::{Error, Result};
use crate::optimizer::{apply_step, Batch};
use crate::scalar::{dot, norm, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ValueInterval<T> {
    pub lower: T,
    pub upper: T,
    /// Parameters of the weight function attaining the lower bound.
    pub tau_lower: Vec<T>,
    pub tau_upper: Vec<T>,
    pub sigma_n: T,
    pub delta: f64,
}

fn check_weights<T: Scalar>(w: &[T], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Index(format!("{} weights for {n} transitions", w.len())));
    }
    Ok(())
}

/// v(τ) = φ̄(s⁰, π) + Σ τᵢ(γ φ̄(s′ᵢ, π) − φ(sᵢ, aᵢ)) / ((1−γ)n), so that
/// M̂(q, τ) = ⟨θ, v⟩.
fn coefficient<T: Scalar>(bt: &Batch<T>, w: &[T]) -> Vec<T> {
    let scale = bt.scale(bt.n);
    let mut v = bt.phibar0.clone();
    for (i, &t) in w.iter().enumerate() {
        for (vj, &x) in v.iter_mut().zip(bt.psi_row(i)) {
            *vj = *vj - scale * t * x;
        }
    }
    v
}

/// M̂(q, τ) = Σ τᵢ(γ q(s′ᵢ, π) − q(sᵢ, aᵢ)) / ((1−γ)n) + q(s⁰, π).
pub fn m_hat<T: Scalar>(
    q: &LinearQ<T>,
    tau_weights: &[T],
    pi: &Policy<T>,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
) -> Result<T> {
    check_weights(tau_weights, ds.len())?;
    let bt = Batch::new(ds, fm, pi)?;
    Ok(dot(&coefficient(&bt, tau_weights), &q.theta))
}

/// sup over ‖θ‖ ≤ radius of M̂(θ, τ) = radius·‖v‖, with its maximiser.
pub fn sup_m_hat_linear<T: Scalar>(
    tau_weights: &[T],
    pi: &Policy<T>,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    radius: T,
) -> Result<(T, Vec<T>)> {
    if !(radius > T::zero()) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    check_weights(tau_weights, ds.len())?;
    let v = coefficient(&Batch::new(ds, fm, pi)?, tau_weights);
    let nv = norm(&v);
    let theta = if nv > T::zero() {
        v.iter().map(|&x| radius * x / nv).collect()
    } else {
        vec![T::zero(); v.len()]
    };
    Ok((radius * nv, theta))
}

/// Ridge-regularised LSTD fit of q^π on the features:
/// (Σ φᵢΨᵢᵀ/n + ridge·I) θ = Σ φᵢ rᵢ / n.
pub fn lstd_q<T: Scalar>(
    pi: &Policy<T>,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    ridge: f64,
    radius: T,
) -> Result<LinearQ<T>> {
    let bt = Batch::new(ds, fm, pi)?;
    let d = bt.d;
    let mut a = DMatrix::<f64>::zeros(d, d);
    let mut b = DVector::<f64>::zeros(d);
    for i in 0..bt.n {
        let phi: Vec<f64> = bt.phi_row(i).iter().map(|x| x.to_f64_lossy()).collect();
        let psi: Vec<f64> = bt.psi_row(i).iter().map(|x| x.to_f64_lossy()).collect();
        let r = bt.r[i].to_f64_lossy();
        for (j, &pj) in phi.iter().enumerate() {
            if pj == 0.0 {
                continue;
            }
            b[j] += pj * r;
            for (k, &qk) in psi.iter().enumerate() {
                a[(j, k)] += pj * qk;
            }
        }
    }
    let n = bt.n as f64;
    a /= n;
    b /= n;
    for j in 0..d {
        a[(j, j)] += ridge;
    }
    let theta = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Degenerate("LSTD system is singular; raise the ridge".into()))?;
    let mut theta: Vec<T> = theta.iter().map(|&x| T::of(x)).collect();
    project_ball_in_place(&mut theta, radius);
    Ok(LinearQ { theta, radius })
}

/// Per-transition temporal differences rᵢ + γ q(s′ᵢ, π) − q(sᵢ, aᵢ).
pub fn td_residuals<T: Scalar>(q: &LinearQ<T>, pi: &Policy<T>, ds: &OfflineDataset<T>, fm: &FeatureMap<T>) -> Result<Vec<T>> {
    let bt = Batch::new(ds, fm, pi)?;
    Ok((0..bt.n).map(|i| bt.r[i] - dot(bt.psi_row(i), &q.theta)).collect())
}

/// sup_τ {Σ τᵢ xᵢ/((1−γ)n) − λ ξ_n(τ)} with ξ_n(τ) = Σ D(τᵢ)/((1−γ)n): the sup
/// separates per sample with τᵢ* = argmax_τ {τ xᵢ/λ − D(τ)}.
fn penalised_sup<T: Scalar>(
    x: &[T],
    idx: impl Iterator<Item = usize>,
    det: &DetectionFunction<T>,
    lambda: T,
    gamma: T,
) -> (T, T) {
    let mut pos = T::zero();
    let mut neg = T::zero();
    let mut m = 0usize;
    for i in idx {
        let tp = det.conjugate_argmax(x[i] / lambda);
        pos = pos + tp * x[i] - lambda * det.eval_unchecked(tp);
        let tn = det.conjugate_argmax(-x[i] / lambda);
        neg = neg - tn * x[i] - lambda * det.eval_unchecked(tn);
        m += 1;
    }
    let s = T::one() / ((T::one() - gamma) * T::from_usize_lossy(m));
    (pos * s, neg * s)
}

/// The deviation statistic on the full sample: the larger of the two
/// one-sided penalised suprema.
pub fn deviation_statistic<T: Scalar>(residuals: &[T], det: &DetectionFunction<T>, lambda: T, gamma: T) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(Error::ZeroPenalty);
    }
    let (p, n) = penalised_sup(residuals, 0..residuals.len(), det, lambda, gamma);
    Ok(p.max(n))
}

/// (1−δ) bootstrap quantile of the deviation statistic, residuals taken
/// with respect to `q_ref`.
#[allow(clippy::too_many_arguments)]
pub fn sigma_n_bootstrap<T: Scalar>(
    pi: &Policy<T>,
    q_ref: &LinearQ<T>,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
    lambda: T,
    boots: usize,
    delta: f64,
    seed: u64,
) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(Error::ZeroPenalty);
    }
    if boots < 100 {
        return Err(Error::Config(format!("need at least 100 bootstrap resamples, got {boots}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    let resid = td_residuals(q_ref, pi, ds, fm)?;
    let n = resid.len();
    let gamma = ds.discount();
    let mut stats: Vec<f64> = (0..boots)
        .map(|b| {
            let mut rng = substream(seed, b as u64);
            let idx = (0..n).map(move |_| rng.random_range(0..n));
            let (p, m) = penalised_sup(&resid, idx, det, lambda, gamma);
            p.max(m).to_f64_lossy()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(T::of(empirical_quantile(&stats, 1.0 - delta)))
}

/// Order statistic ⌈q·m⌉ (1-based) of sorted values.
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    let k = ((q * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

/// σ_n = c·√(ln(1/δ)/n).
pub fn sigma_n_theory(c: f64, delta: f64, n: usize) -> Result<f64> {
    if !(c >= 0.0) || !(delta > 0.0 && delta < 1.0) || n == 0 {
        return Err(Error::Config("sigma_n_theory needs c >= 0, delta in (0, 1), n >= 1".into()));
    }
    Ok(c * ((1.0 / delta).ln() / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SigmaMethod {
    #[default]
    Bootstrap,
    Theory {
        c: f64,
    },
    /// Fixed value; used for ablations and for widening experiments.
    Fixed {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiConfig {
    pub q_radius: f64,
    pub tau_cap: f64,
    pub tau_model: TauModelKind,
    pub tau_width: usize,
    /// Iterations of the τ ascent/descent; 0 keeps τ ≡ 1.
    pub steps: usize,
    pub eta0: f64,
    pub geometry: Geometry,
    pub ridge: f64,
    pub boots: usize,
    pub sigma: SigmaMethod,
    /// Added to σ_n after it is computed.
    pub sigma_extra: f64,
    pub lstd_ridge: f64,
    pub seed: u64,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self {
            q_radius: 100.0,
            tau_cap: 10.0,
            tau_model: TauModelKind::Linear,
            tau_width: 16,
            steps: 2000,
            eta0: 0.05,
            geometry: Geometry::Diagonal,
            ridge: 1e-3,
            boots: 200,
            sigma: SigmaMethod::Bootstrap,
            sigma_extra: 0.0,
            lstd_ridge: 1e-6,
            seed: 0,
        }
    }
}

/// One side of the interval as a function of τ: value and ∂/∂τᵢ.
#[derive(Clone, Copy)]
struct BoundObjective<'a, T> {
    bt: &'a Batch<T>,
    det: &'a DetectionFunction<T>,
    lambda: T,
    radius: T,
    /// +1 for the upper bound, −1 for the lower.
    side: T,
}

impl<T: Scalar> BoundObjective<'_, T> {
    /// b(τ) + side·(R‖v(τ)‖ + λξ(τ)), without σ_n.
    fn value(&self, taus: &[T]) -> T {
        let scale = self.bt.scale(self.bt.n);
        let b = taus.iter().zip(&self.bt.r).fold(T::zero(), |a, (&t, &r)| a + t * r) * scale;
        let xi = taus.iter().fold(T::zero(), |a, &t| a + self.det.eval_unchecked(t)) * scale;
        b + self.side * (self.radius * norm(&coefficient(self.bt, taus)) + self.lambda * xi)
    }

    fn grad_taus(&self, taus: &[T]) -> Vec<T> {
        let scale = self.bt.scale(self.bt.n);
        let v = coefficient(self.bt, taus);
        let nv = norm(&v);
        (0..self.bt.n)
            .map(|i| {
                // ∂‖v‖/∂τᵢ = −scale·⟨v/‖v‖, Ψᵢ⟩
                let dn = if nv > T::zero() {
                    -scale * dot(&v, self.bt.psi_row(i)) / nv
                } else {
                    T::zero()
                };
                scale * self.bt.r[i] + self.side * (self.radius * dn + self.lambda * scale * self.det.deriv_unchecked(taus[i]))
            })
            .collect()
    }
}

fn initial_tau<T: Scalar>(cfg: &CiConfig, d: usize) -> TauModel<T> {
    let cap = T::of(cfg.tau_cap);
    match cfg.tau_model {
        TauModelKind::Linear => TauModel::Linear(LinearTau::unit(d, cap)),
        TauModelKind::Network => {
            let mut rng = substream(cfg.seed, u64::MAX);
            TauModel::Network(TauNetwork::init(d, cfg.tau_width, cap, &mut rng))
        }
    }
}

/// Optimises one bound over τ with the trainer's scaled prox steps, starting
/// at τ ≡ 1 and keeping the best iterate. Returns (bound without σ_n, params).
fn optimise_bound<T: Scalar>(obj: &BoundObjective<'_, T>, cfg: &CiConfig, metric: Option<&[T]>) -> Result<(T, Vec<T>)> {
    let bt = obj.bt;
    let rows: Vec<usize> = (0..bt.n).collect();
    let mut tau = initial_tau::<T>(cfg, bt.d);
    let mut taus = bt.taus(&tau, &rows);
    let mut best = (obj.value(&taus), tau.params().to_vec());
    let eta0 = T::of(cfg.eta0);
    for t in 1..=cfg.steps {
        let gt = obj.grad_taus(&taus);
        let mut grad = vec![T::zero(); tau.params().len()];
        for (i, &g) in gt.iter().enumerate() {
            // ascend the lower bound, descend the upper
            tau.accumulate_grad(bt.phi_row(i), -obj.side * g, &mut grad);
        }
        // unit-length step in the metric, so the nonsmooth ‖v‖ term cannot
        // blow the iterate away; the 1/√t decay is the usual subgradient rate
        let len = match metric {
            None => norm(&grad),
            Some(m) => grad.iter().zip(m).fold(T::zero(), |a, (&g, &mj)| a + g * g / mj).sqrt(),
        };
        if !(len > T::zero()) {
            break;
        }
        let eta = eta0 / (len * T::from_usize_lossy(t).sqrt());
        apply_step(tau.params_mut(), &grad, eta, metric);
        taus = bt.taus(&tau, &rows);
        let v = obj.value(&taus);
        if !v.is_finite() {
            return Err(Error::Diverged {
                round: 0,
                step: t,
                msg: format!("interval objective is {v}"),
            });
        }
        if -obj.side * v > -obj.side * best.0 {
            best = (v, tau.params().to_vec());
        }
    }
    Ok(best)
}

fn sigma_for<T: Scalar>(
    pi: &Policy<T>,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
    lambda: T,
    delta: f64,
    cfg: &CiConfig,
) -> Result<T> {
    let s = match cfg.sigma {
        SigmaMethod::Bootstrap => {
            let q_ref = lstd_q(pi, ds, fm, cfg.lstd_ridge, T::infinity())?;
            sigma_n_bootstrap(pi, &q_ref, ds, fm, det, lambda, cfg.boots, delta, cfg.seed)?
        }
        SigmaMethod::Theory { c } => T::of(sigma_n_theory(c, delta, ds.len())?),
        SigmaMethod::Fixed { value } => T::of(value),
    };
    Ok(s + T::of(cfg.sigma_extra))
}

/// [sup_τ Ĵ⁻(π; τ), inf_τ Ĵ⁺(π; τ)].
#[allow(clippy::too_many_arguments)]
pub fn confidence_interval<T: Scalar>(
    pi: &Policy<T>,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
    lambda: T,
    delta: f64,
    cfg: &CiConfig,
) -> Result<ValueInterval<T>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(cfg.q_radius > 0.0 && cfg.tau_cap > 1.0) {
        return Err(Error::Config("q_radius must be > 0 and tau_cap > 1".into()));
    }
    let sigma_n = sigma_for(pi, ds, fm, det, lambda, delta, cfg)?;
    let bt = Batch::new(ds, fm, pi)?;
    let metric = match cfg.geometry {
        Geometry::Euclidean => None,
        Geometry::Diagonal => {
            let mut m = vec![T::zero(); bt.d];
            for i in 0..bt.n {
                for (mj, &x) in m.iter_mut().zip(bt.phi_row(i)) {
                    *mj = *mj + x * x;
                }
            }
            let nt = T::from_usize_lossy(bt.n);
            m.iter_mut().for_each(|x| *x = *x / nt);
            Some(initial_tau::<T>(cfg, bt.d).diagonal_metric(&m, T::of(cfg.ridge)))
        }
    };
    let radius = T::of(cfg.q_radius);
    let lower_obj = BoundObjective {
        bt: &bt,
        det,
        lambda,
        radius,
        side: -T::one(),
    };
    let upper_obj = BoundObjective {
        side: T::one(),
        ..lower_obj
    };
    let (lo, tau_lower) = optimise_bound(&lower_obj, cfg, metric.as_deref())?;
    let (hi, tau_upper) = optimise_bound(&upper_obj, cfg, metric.as_deref())?;
    let (mut lower, mut upper) = (lo - sigma_n, hi + sigma_n);
    if lower > upper {
        if lower - upper < T::of(1e-6) {
            let mid = T::of(0.5) * (lower + upper);
            lower = mid;
            upper = mid;
        } else {
            return Err(Error::Numeric(format!(
                "interval bounds cross: lower {lower} > upper {upper}; q_radius may be too small for the value scale"
            )));
        }
    }
    Ok(ValueInterval {
        lower,
        upper,
        tau_lower,
        tau_upper,
        sigma_n,
        delta,
    })
}

/// How τ is searched in the population interval.
#[derive(Clone, Debug, PartialEq)]
pub enum TauSearch {
    /// Explicit candidates, each a flattened |S|·|A| table.
    Grid(Vec<Vec<f64>>),
    /// All of [0, cap]^{|S|·|A|}: τ ≡ 1 and the clipped occupancy ratio as
    /// starting points, refined by projected supergradient steps.
    Free { steps: usize },
}

/// Population version of the interval on a tabular MDP with data
/// distribution `mu` (an |S|×|A| table summing to 1), q-class the ball of
/// radius `radius` around `q_center` (flattened |S|·|A|).
pub struct PopulationProblem<'a> {
    pub mdp: &'a TabularMDP,
    pub mu: &'a [Vec<f64>],
    pub q_center: &'a [f64],
    pub radius: f64,
}

impl PopulationProblem<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.mdp.num_states, self.mdp.num_actions)
    }

    /// Pieces of the bound at τ: (b(τ), v(τ), ξ(τ)) with
    /// b = E_μ[τr]/(1−γ), v the θ-coefficient of M(q, τ), ξ = E_μ[D(τ)]/(1−γ).
    fn pieces(&self, pi: &TabularPolicy<f64>, det: &DetectionFunction<f64>, tau: &[f64]) -> (f64, Vec<f64>, f64) {
        let (ns, na) = self.dims();
        let g = self.mdp.gamma;
        let k = 1.0 / (1.0 - g);
        let mut v = vec![0.0; ns * na];
        let s0 = self.mdp.initial_state;
        for a in 0..na {
            v[s0 * na + a] += pi.probs[s0][a];
        }
        let (mut b, mut xi) = (0.0, 0.0);
        for s in 0..ns {
            for a in 0..na {
                let w = self.mu[s][a] * tau[s * na + a];
                b += k * w * self.mdp.rewards[s][a];
                xi += k * self.mu[s][a] * det.eval_unchecked(tau[s * na + a]);
                v[s * na + a] -= k * w;
                for (sp, &p) in self.mdp.transitions[s][a].iter().enumerate() {
                    if p > 0.0 {
                        for ap in 0..na {
                            v[sp * na + ap] += k * w * g * p * pi.probs[sp][ap];
                        }
                    }
                }
            }
        }
        (b, v, xi)
    }

    fn bound(&self, pi: &TabularPolicy<f64>, det: &DetectionFunction<f64>, lambda: f64, tau: &[f64], side: f64) -> f64 {
        let (b, v, xi) = self.pieces(pi, det, tau);
        b + dot(self.q_center, &v) + side * (self.radius * norm(&v) + lambda * xi)
    }
}

/// Population lower and upper bounds:
/// sup_τ inf_q {H(τ, q) − λξ(τ)} and inf_τ sup_q {H(τ, q) + λξ(τ)}.
pub fn value_interval_population(
    pi: &TabularPolicy<f64>,
    prob: &PopulationProblem<'_>,
    det: &DetectionFunction<f64>,
    lambda: f64,
    search: &TauSearch,
) -> Result<(f64, f64)> {
    let (ns, na) = prob.dims();
    if prob.mu.len() != ns || prob.mu.iter().any(|r| r.len() != na) || prob.q_center.len() != ns * na {
        return Err(Error::Schema("population problem dimensions do not match the MDP".into()));
    }
    if !(prob.radius >= 0.0) {
        return Err(Error::Config("radius must be >= 0".into()));
    }
    let cap = det.domain_cap;
    let best_of = |side: f64, cands: &[Vec<f64>]| -> Result<f64> {
        let mut best = None::<f64>;
        for c in cands {
            if c.len() != ns * na || c.iter().any(|&x| !(0.0..=cap).contains(&x)) {
                return Err(Error::Domain { x: f64::NAN, cap });
            }
            let v = prob.bound(pi, det, lambda, c, side);
            best = Some(match best {
                None => v,
                Some(b) if side < 0.0 => b.max(v),
                Some(b) => b.min(v),
            });
        }
        best.ok_or_else(|| Error::Config("empty tau grid".into()))
    };
    match search {
        TauSearch::Grid(cands) => Ok((best_of(-1.0, cands)?, best_of(1.0, cands)?)),
        TauSearch::Free { steps } => {
            let occ = prob.mdp.occupancy(pi)?;
            let ratio: Vec<f64> = (0..ns * na)
                .map(|j| {
                    let (s, a) = (j / na, j % na);
                    if prob.mu[s][a] > 0.0 {
                        (occ[s][a] / prob.mu[s][a]).min(cap)
                    } else {
                        1.0
                    }
                })
                .collect();
            let starts = vec![vec![1.0; ns * na], ratio];
            let lo = refine(prob, pi, det, lambda, &starts, -1.0, *steps);
            let hi = refine(prob, pi, det, lambda, &starts, 1.0, *steps);
            Ok((lo, hi))
        }
    }
}

/// Projected supergradient ascent (side −1) or subgradient descent (side +1)
/// of the population bound on the box [0, cap], from the best start.
fn refine(
    prob: &PopulationProblem<'_>,
    pi: &TabularPolicy<f64>,
    det: &DetectionFunction<f64>,
    lambda: f64,
    starts: &[Vec<f64>],
    side: f64,
    steps: usize,
) -> f64 {
    let f = |t: &[f64]| prob.bound(pi, det, lambda, t, side);
    let better = |a: f64, b: f64| if side < 0.0 { a > b } else { a < b };
    let mut x = starts[0].clone();
    let mut best = f(&x);
    for s in &starts[1..] {
        let v = f(s);
        if better(v, best) {
            best = v;
            x = s.clone();
        }
    }
    let cap = det.domain_cap;
    let h = 1e-7;
    for k in 1..=steps {
        // the objective is piecewise smooth in τ; central differences suffice
        let g: Vec<f64> = (0..x.len())
            .map(|j| {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] = (xp[j] + h).min(cap);
                xm[j] = (xm[j] - h).max(0.0);
                (f(&xp) - f(&xm)) / (xp[j] - xm[j])
            })
            .collect();
        let gn = norm(&g);
        if gn == 0.0 {
            break;
        }
        let step = 0.5 / (k as f64).sqrt() / gn;
        for (xj, gj) in x.iter_mut().zip(&g) {
            *xj = (*xj - side * step * gj).clamp(0.0, cap);
        }
        let v = f(&x);
        if better(v, best) {
            best = v;
        }
    }
    best
}
