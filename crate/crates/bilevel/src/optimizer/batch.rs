use crate::approx::{FeatureMap, Policy, TauModel};
use crate::core::OfflineDataset;
use crate::detection::DetectionFunction;
use crate::error::{Error, Result};
use crate::scalar::{dot, sparse_dot, Scalar};

/// Dataset quantities for a fixed policy π, laid out for the inner loop:
/// φᵢ = φ(sᵢ, aᵢ), Ψᵢ = φᵢ − γ φ̄(s′ᵢ, π), rewards, and φ̄(s⁰, π).
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub n: usize,
    pub d: usize,
    pub gamma: T,
    /// n × d, row-major.
    pub phi: Vec<T>,
    /// n × d, row-major.
    pub psi: Vec<T>,
    pub r: Vec<T>,
    pub phibar0: Vec<T>,
    /// Nonzero patterns of `phi` and `psi`, present when both are sparse
    /// (tabular features).
    sparse: Option<(SparseRows<T>, SparseRows<T>)>,
}

/// Compressed rows of a row-major matrix.
#[derive(Clone, Debug)]
struct SparseRows<T> {
    start: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<T>,
}

impl<T: Scalar> SparseRows<T> {
    /// `None` unless at most a quarter of the entries are nonzero.
    fn from_dense(m: &[T], d: usize) -> Option<Self> {
        let nnz = m.iter().filter(|&&x| x != T::zero()).count();
        if d == 0 || 4 * nnz > m.len() {
            return None;
        }
        let mut out = Self {
            start: vec![0],
            idx: Vec::with_capacity(nnz),
            val: Vec::with_capacity(nnz),
        };
        for row in m.chunks(d) {
            for (j, &x) in row.iter().enumerate() {
                if x != T::zero() {
                    out.idx.push(j);
                    out.val.push(x);
                }
            }
            out.start.push(out.idx.len());
        }
        Some(out)
    }

    fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.start[i], self.start[i + 1]);
        (&self.idx[a..b], &self.val[a..b])
    }
}

/// φ̄(s, π) = Σ_a π(a|s) φ(s, a).
pub fn expected_features<T: Scalar>(fm: &FeatureMap<T>, pi: &Policy<T>, s: &[T], out: &mut [T]) -> Result<()> {
    let probs = pi.probs(s)?;
    if probs.len() != fm.num_actions {
        return Err(Error::FeatureMismatch(format!(
            "policy has {} actions, features {}",
            probs.len(),
            fm.num_actions
        )));
    }
    out.iter_mut().for_each(|x| *x = T::zero());
    let mut row = vec![T::zero(); fm.dim()];
    for (a, &p) in probs.iter().enumerate() {
        if p > T::zero() {
            fm.featurize_into(s, a, &mut row)?;
            for (o, &x) in out.iter_mut().zip(&row) {
                *o = *o + p * x;
            }
        }
    }
    Ok(())
}

impl<T: Scalar> Batch<T> {
    pub fn new(ds: &OfflineDataset<T>, fm: &FeatureMap<T>, pi: &Policy<T>) -> Result<Self> {
        let phi = fm.design(ds)?;
        Self::with_design(ds, fm, pi, phi)
    }

    /// Reuses a precomputed design matrix (it does not depend on π).
    pub fn with_design(ds: &OfflineDataset<T>, fm: &FeatureMap<T>, pi: &Policy<T>, phi: Vec<T>) -> Result<Self> {
        let (n, d) = (ds.len(), fm.dim());
        let gamma = ds.discount();
        let mut psi = phi.clone();
        let mut bar = vec![T::zero(); d];
        for (i, t) in ds.transitions().iter().enumerate() {
            expected_features(fm, pi, &t.sp, &mut bar)?;
            for (p, &b) in psi[i * d..(i + 1) * d].iter_mut().zip(&bar) {
                *p = *p - gamma * b;
            }
        }
        let mut phibar0 = vec![T::zero(); d];
        expected_features(fm, pi, ds.initial_state(), &mut phibar0)?;
        let sparse = SparseRows::from_dense(&phi, d).zip(SparseRows::from_dense(&psi, d));
        Ok(Self {
            n,
            d,
            gamma,
            sparse,
            phi,
            psi,
            r: ds.transitions().iter().map(|t| t.r).collect(),
            phibar0,
        })
    }

    pub fn phi_row(&self, i: usize) -> &[T] {
        &self.phi[i * self.d..(i + 1) * self.d]
    }

    pub fn psi_row(&self, i: usize) -> &[T] {
        &self.psi[i * self.d..(i + 1) * self.d]
    }

    /// 1 / ((1 − γ) m) for a batch of m rows.
    pub fn scale(&self, m: usize) -> T {
        T::one() / ((T::one() - self.gamma) * T::from_usize_lossy(m))
    }

    pub fn taus(&self, tau: &TauModel<T>, rows: &[usize]) -> Vec<T> {
        match (&self.sparse, tau) {
            (Some((phi, _)), TauModel::Linear(t)) => rows
                .iter()
                .map(|&i| {
                    let (idx, val) = phi.row(i);
                    t.forward_sparse(idx, val)
                })
                .collect(),
            _ => rows.iter().map(|&i| tau.forward(self.phi_row(i))).collect(),
        }
    }

    /// ⟨Ψᵢ, v⟩.
    pub fn psi_dot(&self, i: usize, v: &[T]) -> T {
        match &self.sparse {
            Some((_, psi)) => {
                let (idx, val) = psi.row(i);
                sparse_dot(idx, val, v)
            }
            None => dot(self.psi_row(i), v),
        }
    }

    /// out += c·Ψᵢ.
    pub fn psi_axpy(&self, i: usize, c: T, out: &mut [T]) {
        match &self.sparse {
            Some((_, psi)) => {
                let (idx, val) = psi.row(i);
                for (&j, &x) in idx.iter().zip(val) {
                    out[j] = out[j] + c * x;
                }
            }
            None => {
                for (o, &x) in out.iter_mut().zip(self.psi_row(i)) {
                    *o = *o + c * x;
                }
            }
        }
    }

    /// Adds `weight`·∇ψτ at row i to `out`.
    pub fn tau_grad_axpy(&self, tau: &TauModel<T>, i: usize, weight: T, out: &mut [T]) {
        match (&self.sparse, tau) {
            (Some((phi, _)), TauModel::Linear(t)) => {
                let (idx, val) = phi.row(i);
                t.accumulate_grad_sparse(idx, val, weight, out);
            }
            _ => {
                tau.accumulate_grad(self.phi_row(i), weight, out);
            }
        }
    }

    /// δᵢ = q(sᵢ, aᵢ) − rᵢ − γ q(s′ᵢ, π).
    pub fn residuals(&self, theta: &[T], rows: &[usize]) -> Vec<T> {
        rows.iter().map(|&i| self.psi_dot(i, theta) - self.r[i]).collect()
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.n).collect()
    }
}

/// Value of the penalised adversarial loss and the pieces it is made of.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts<T> {
    pub value: T,
    /// q(s⁰, π).
    pub q0: T,
    /// Σ τᵢ δᵢ.
    pub aggregate: T,
    /// Σ D(τᵢ).
    pub penalty: T,
}

pub(crate) fn loss_parts<T: Scalar>(
    b: &Batch<T>,
    theta: &[T],
    taus: &[T],
    resid: &[T],
    c_star: T,
    lambda: T,
    det: &DetectionFunction<T>,
) -> LossParts<T> {
    let q0 = dot(&b.phibar0, theta);
    let aggregate = taus.iter().zip(resid).fold(T::zero(), |acc, (&t, &r)| acc + t * r);
    let penalty = taus.iter().fold(T::zero(), |acc, &t| acc + det.eval_unchecked(t));
    let value = q0 + b.scale(taus.len()) * (c_star * aggregate.abs() - lambda * penalty);
    LossParts {
        value,
        q0,
        aggregate,
        penalty,
    }
}

/// sign with 0 at 0, the subgradient choice at the kink of |·|.
pub(crate) fn sign0<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Σ τᵢ Ψᵢ and Σ τᵢ rᵢ: with τ fixed, S(θ) = ⟨g, θ⟩ − b.
pub(crate) fn weighted_sums<T: Scalar>(bt: &Batch<T>, taus: &[T], rows: &[usize]) -> (Vec<T>, T) {
    let mut g = vec![T::zero(); bt.d];
    let mut b = T::zero();
    for (&i, &t) in rows.iter().zip(taus) {
        bt.psi_axpy(i, t, &mut g);
        b = b + t * bt.r[i];
    }
    (g, b)
}

/// ∂L/∂ψ = Σᵢ [c*·sign(S)·δᵢ − λ D′(τᵢ)] ∇ψτᵢ / ((1−γ)m); also returns τ and δ.
pub(crate) fn psi_gradient<T: Scalar>(
    bt: &Batch<T>,
    theta: &[T],
    tau: &TauModel<T>,
    rows: &[usize],
    c_star: T,
    lambda: T,
    det: &DetectionFunction<T>,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let taus = bt.taus(tau, rows);
    let (grad, resid) = psi_gradient_with(bt, theta, tau, rows, &taus, c_star, lambda, det);
    (grad, taus, resid)
}

/// As [`psi_gradient`] with τ already evaluated on `rows`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn psi_gradient_with<T: Scalar>(
    bt: &Batch<T>,
    theta: &[T],
    tau: &TauModel<T>,
    rows: &[usize],
    taus: &[T],
    c_star: T,
    lambda: T,
    det: &DetectionFunction<T>,
) -> (Vec<T>, Vec<T>) {
    let resid = bt.residuals(theta, rows);
    let s = sign0(taus.iter().zip(&resid).fold(T::zero(), |acc, (&t, &r)| acc + t * r));
    let scale = bt.scale(rows.len());
    let mut grad = vec![T::zero(); tau.params().len()];
    for ((&i, &t), &dl) in rows.iter().zip(taus).zip(&resid) {
        let coef = scale * (c_star * s * dl - lambda * det.deriv_unchecked(t));
        if coef != T::zero() {
            bt.tau_grad_axpy(tau, i, coef, &mut grad);
        }
    }
    (grad, resid)
}
