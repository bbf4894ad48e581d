use crate::approx::{project_ball_in_place, FeatureMap, LinearQ, Policy, SoftmaxPolicy, TabularPolicy, TauModel};
use crate::core::OfflineDataset;
use crate::detection::DetectionFunction;
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Scalar};

use super::batch::{loss_parts, psi_gradient, sign0, weighted_sums, Batch, LossParts};

fn check_finite<T: Scalar>(what: &str, x: T) -> Result<T> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("{what} is {x}")))
    }
}

/// L(q, τ, π) = q(s⁰, π) + (c*·|Σ τᵢδᵢ| − λ Σ D(τᵢ)) / ((1−γ)n).
#[allow(clippy::too_many_arguments)]
pub fn adversarial_loss<T: Scalar>(
    q: &LinearQ<T>,
    tau: &TauModel<T>,
    pi: &Policy<T>,
    c_star: T,
    lambda: T,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
) -> Result<T> {
    Ok(adversarial_loss_parts(q, tau, pi, c_star, lambda, ds, fm, det)?.value)
}

#[allow(clippy::too_many_arguments)]
pub fn adversarial_loss_parts<T: Scalar>(
    q: &LinearQ<T>,
    tau: &TauModel<T>,
    pi: &Policy<T>,
    c_star: T,
    lambda: T,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
) -> Result<LossParts<T>> {
    let b = Batch::new(ds, fm, pi)?;
    let rows = b.all_rows();
    let taus = b.taus(tau, &rows);
    let resid = b.residuals(&q.theta, &rows);
    let parts = loss_parts(&b, &q.theta, &taus, &resid, c_star, lambda, det);
    check_finite("q(s0, pi)", parts.q0)?;
    check_finite("weighted residual sum", parts.aggregate)?;
    check_finite("penalty sum", parts.penalty)?;
    check_finite("loss", parts.value)?;
    Ok(parts)
}

/// Projected subgradient descent on θ for fixed τ-weights. With τ fixed the
/// loss is ⟨φ̄⁰, θ⟩ + κ|⟨g, θ⟩ − b| + const, so each step is O(d).
/// With `keep_best` the best iterate seen (including the start) is returned.
#[allow(clippy::too_many_arguments)]
pub(crate) fn descend_theta<T: Scalar>(
    bt: &Batch<T>,
    taus: &[T],
    rows: &[usize],
    theta: &mut [T],
    c_star: T,
    radius: T,
    steps: usize,
    lr: T,
    metric: Option<&[T]>,
    keep_best: bool,
) {
    let (g, b) = weighted_sums(bt, taus, rows);
    let kappa = c_star * bt.scale(rows.len());
    let f = |th: &[T]| dot(&bt.phibar0, th) + kappa * (dot(&g, th) - b).abs();
    let mut best = theta.to_vec();
    let mut best_f = f(theta);
    for _ in 0..steps {
        let s = sign0(dot(&g, theta) - b);
        for j in 0..theta.len() {
            let grad = bt.phibar0[j] + kappa * s * g[j];
            let m = metric.map_or(T::one(), |m| m[j]);
            theta[j] = theta[j] - lr * grad / m;
        }
        project_ball_in_place(theta, radius);
        if !keep_best {
            continue;
        }
        let v = f(theta);
        if v < best_f {
            best_f = v;
            best.copy_from_slice(theta);
        }
    }
    if keep_best {
        theta.copy_from_slice(&best);
    }
}

/// Approximate argmin over ‖θ‖ ≤ radius of the loss at fixed (τ, π).
#[allow(clippy::too_many_arguments)]
pub fn solve_inner_q<T: Scalar>(
    q_init: &LinearQ<T>,
    tau: &TauModel<T>,
    pi: &Policy<T>,
    c_star: T,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    steps: usize,
    lr: T,
) -> Result<LinearQ<T>> {
    if steps == 0 {
        return Err(Error::Config("solve_inner_q needs steps >= 1".into()));
    }
    let bt = Batch::new(ds, fm, pi)?;
    let rows = bt.all_rows();
    let taus = bt.taus(tau, &rows);
    let mut q = q_init.clone();
    project_ball_in_place(&mut q.theta, q.radius);
    descend_theta(&bt, &taus, &rows, &mut q.theta, c_star, q.radius, steps, lr, None, true);
    Ok(q)
}

/// ∂L/∂ψ at (q̄, τ, π), with the sign of |·| taken from the full-batch sum.
#[allow(clippy::too_many_arguments)]
pub fn tau_gradient<T: Scalar>(
    q_bar: &LinearQ<T>,
    tau: &TauModel<T>,
    pi: &Policy<T>,
    c_star: T,
    lambda: T,
    ds: &OfflineDataset<T>,
    fm: &FeatureMap<T>,
    det: &DetectionFunction<T>,
) -> Result<Vec<T>> {
    let bt = Batch::new(ds, fm, pi)?;
    let rows = bt.all_rows();
    Ok(psi_gradient(&bt, &q_bar.theta, tau, &rows, c_star, lambda, det).0)
}

/// Euclidean prox ascent step ψ ← ψ + η·grad.
pub fn prox_tau_step<T: Scalar>(tau: &TauModel<T>, grad: &[T], eta: T) -> Result<TauModel<T>> {
    prox_tau_step_scaled(tau, grad, eta, None)
}

/// Prox step under ½(ψ−ψ')ᵀM(ψ−ψ') with diagonal M: ψ ← ψ + η·M⁻¹grad.
pub fn prox_tau_step_scaled<T: Scalar>(tau: &TauModel<T>, grad: &[T], eta: T, metric: Option<&[T]>) -> Result<TauModel<T>> {
    if !(eta > T::zero()) {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    if grad.len() != tau.params().len() {
        return Err(Error::Index(format!(
            "gradient has {} entries, tau has {}",
            grad.len(),
            tau.params().len()
        )));
    }
    let mut out = tau.clone();
    apply_step(out.params_mut(), grad, eta, metric);
    Ok(out)
}

pub(crate) fn apply_step<T: Scalar>(params: &mut [T], grad: &[T], eta: T, metric: Option<&[T]>) {
    match metric {
        None => axpy(eta, grad, params),
        Some(m) => {
            for ((p, &g), &mj) in params.iter_mut().zip(grad).zip(m) {
                *p = *p + eta * g / mj;
            }
        }
    }
}

/// η_t = η0 / (1 + 0.3·t^{1/4}).
pub fn eta_schedule<T: Scalar>(eta0: T, t: usize) -> T {
    eta0 / (T::one() + T::of(0.3) * T::from_usize_lossy(t.max(1)).powf(T::of(0.25)))
}

/// η_t = min{(t·T·4G²/(σ⁴C₁))^{1/4}, 1/C₁}.
pub fn eta_theory(t: usize, horizon: usize, g: f64, sigma: f64, c1: f64) -> f64 {
    let a = (t as f64 * horizon as f64 * 4.0 * g * g / (sigma.powi(4) * c1)).powf(0.25);
    a.min(1.0 / c1)
}

/// Selection mass ∝ 2η_t − η_t²C₁ over t = 1..=T (clamped at 0).
pub fn theory_iterate_weights(horizon: usize, g: f64, sigma: f64, c1: f64) -> Vec<f64> {
    (1..=horizon)
        .map(|t| {
            let e = eta_theory(t, horizon, g, sigma, c1);
            (2.0 * e - e * e * c1).max(0.0)
        })
        .collect()
}

/// Entropic mirror step π_new ∝ π·exp(ζ q). Tabular policies are updated row
/// by row; softmax policies sharing `fm` get ω ← ω + ζθ.
pub fn mirror_policy_update<T: Scalar>(pi: &Policy<T>, q: &LinearQ<T>, fm: &FeatureMap<T>, zeta: T) -> Result<Policy<T>> {
    if !(zeta >= T::zero()) {
        return Err(Error::Config(format!("zeta must be >= 0, got {zeta}")));
    }
    if q.theta.len() != fm.dim() {
        return Err(Error::FeatureMismatch(format!(
            "theta has {} entries, features {}",
            q.theta.len(),
            fm.dim()
        )));
    }
    match pi {
        Policy::Tabular(p) => {
            let mut rows = Vec::with_capacity(p.num_states());
            let mut phi = vec![T::zero(); fm.dim()];
            for (s, row) in p.probs.iter().enumerate() {
                let state = [T::from_usize_lossy(s)];
                let mut logits = Vec::with_capacity(row.len());
                for (a, &pa) in row.iter().enumerate() {
                    fm.featurize_into(&state, a, &mut phi)?;
                    logits.push(if pa > T::zero() {
                        pa.ln() + zeta * dot(&phi, &q.theta)
                    } else {
                        T::neg_infinity()
                    });
                }
                rows.push(crate::approx::softmax(&logits));
            }
            Ok(Policy::Tabular(TabularPolicy { probs: rows }))
        }
        Policy::Softmax(p) => {
            if &p.features != fm {
                return Err(Error::FeatureMismatch(
                    "softmax policy and q do not share a feature map".into(),
                ));
            }
            let mut omega = p.omega.clone();
            axpy(zeta, &q.theta, &mut omega);
            Ok(Policy::Softmax(SoftmaxPolicy {
                omega,
                radius: p.radius,
                features: p.features.clone(),
            }))
        }
    }
}

/// ζ = √(ln|A| / (2 V̄ K̄)). Logs a warning when K̄ < ln|A|.
pub fn zeta_default(num_actions: usize, v_bar: f64, k_bar: usize) -> Result<f64> {
    if num_actions == 0 || !(v_bar > 0.0) || k_bar == 0 {
        return Err(Error::Config("zeta_default needs positive inputs".into()));
    }
    let la = (num_actions as f64).ln();
    if !zeta_precondition_met(num_actions, k_bar) {
        log::warn!("K = {k_bar} rounds is below ln|A| = {la:.3}; the policy-step guarantee does not apply");
    }
    Ok((la / (2.0 * v_bar * k_bar as f64)).sqrt())
}

pub fn zeta_precondition_met(num_actions: usize, k_bar: usize) -> bool {
    k_bar as f64 >= (num_actions as f64).ln()
}

/// λ = c* = 2n^{1/4} / (3 d ln(V̄√n)).
pub fn hyperparam_rule(n: usize, d: usize, v_bar: f64) -> Result<(f64, f64)> {
    if n < 2 || d == 0 {
        return Err(Error::Config(format!(
            "hyperparam_rule needs n >= 2 and d >= 1, got n={n}, d={d}"
        )));
    }
    let nf = n as f64;
    let log = (v_bar * nf.sqrt()).ln();
    if !(log > 0.0) {
        return Err(Error::Config(format!("ln(V·sqrt(n)) = {log} is not positive")));
    }
    let v = 2.0 * nf.powf(0.25) / (3.0 * d as f64 * log);
    Ok((v, v))
}

/// Empirical action frequencies per tabular state; unseen states are uniform.
pub fn behavior_clone<T: Scalar>(ds: &OfflineDataset<T>, fm: &FeatureMap<T>) -> Result<TabularPolicy<T>> {
    let (ns, na) = (fm.num_states, ds.num_actions());
    if ns == 0 {
        return Err(Error::Config("behavior cloning needs tabular features".into()));
    }
    let mut counts = vec![vec![0usize; na]; ns];
    for t in ds.transitions() {
        counts[fm.state_id(&t.s)?][t.a] += 1;
    }
    let probs = counts
        .into_iter()
        .map(|c| {
            let tot: usize = c.iter().sum();
            if tot == 0 {
                vec![T::one() / T::from_usize_lossy(na); na]
            } else {
                c.iter().map(|&k| T::from_usize_lossy(k) / T::from_usize_lossy(tot)).collect()
            }
        })
        .collect();
    TabularPolicy::new(probs)
}
