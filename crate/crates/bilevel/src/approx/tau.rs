use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::Result;
use crate::scalar::{dot, sigmoid, sparse_dot, Scalar};

/// Bias that makes cap·σ(b) = 1.
pub fn unit_bias<T: Scalar>(cap: T) -> T {
    -(cap - T::one()).ln()
}

/// τ(x) = cap · σ(⟨x, w⟩ + b), parameters stored as `[w.., b]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearTau<T> {
    pub params: Vec<T>,
    pub cap: T,
}

impl<T: Scalar> LinearTau<T> {
    /// τ ≡ 1.
    pub fn unit(input_dim: usize, cap: T) -> Self {
        let mut params = vec![T::zero(); input_dim + 1];
        params[input_dim] = unit_bias(cap);
        Self { params, cap }
    }

    fn input_dim(&self) -> usize {
        self.params.len() - 1
    }

    pub fn forward(&self, x: &[T]) -> T {
        let d = self.input_dim();
        self.cap * sigmoid(dot(&self.params[..d], x) + self.params[d])
    }

    pub fn accumulate_grad(&self, x: &[T], weight: T, out: &mut [T]) -> T {
        let d = self.input_dim();
        let sg = sigmoid(dot(&self.params[..d], x) + self.params[d]);
        let g = weight * self.cap * sg * (T::one() - sg);
        for (o, &xi) in out[..d].iter_mut().zip(x) {
            *o = *o + g * xi;
        }
        out[d] = out[d] + g;
        self.cap * sg
    }

    /// [`forward`](Self::forward) on a row given by its nonzeros.
    pub fn forward_sparse(&self, idx: &[usize], val: &[T]) -> T {
        let d = self.input_dim();
        self.cap * sigmoid(sparse_dot(idx, val, &self.params) + self.params[d])
    }

    pub fn accumulate_grad_sparse(&self, idx: &[usize], val: &[T], weight: T, out: &mut [T]) {
        let d = self.input_dim();
        let sg = sigmoid(sparse_dot(idx, val, &self.params) + self.params[d]);
        let g = weight * self.cap * sg * (T::one() - sg);
        for (&j, &x) in idx.iter().zip(val) {
            out[j] = out[j] + g * x;
        }
        out[d] = out[d] + g;
    }
}

/// Two-layer ReLU network with a scaled-sigmoid output:
/// τ(x) = cap · σ(w₂ · relu(W₁x + b₁) + b₂).
/// Parameters are flattened as `[W₁ (row-major, width × input), b₁, w₂, b₂]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TauNetwork<T> {
    pub input_dim: usize,
    pub width: usize,
    pub cap: T,
    pub params: Vec<T>,
}

impl<T: Scalar> TauNetwork<T> {
    pub fn num_params_for(input_dim: usize, width: usize) -> usize {
        width * input_dim + 2 * width + 1
    }

    /// All weights zero, so τ ≡ cap/2.
    pub fn zeros(input_dim: usize, width: usize, cap: T) -> Self {
        Self {
            input_dim,
            width,
            cap,
            params: vec![T::zero(); Self::num_params_for(input_dim, width)],
        }
    }

    /// He-initialised first layer, zero output weights and the bias set so
    /// that τ ≡ 1 at start.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, width: usize, cap: T, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_dim, width, cap);
        let scale = (2.0 / input_dim.max(1) as f64).sqrt();
        for w in &mut net.params[..width * input_dim] {
            *w = T::of(scale * rng.sample::<f64, _>(StandardNormal));
        }
        let last = net.params.len() - 1;
        net.params[last] = unit_bias(cap);
        net
    }

    fn split(&self) -> (&[T], &[T], &[T], T) {
        let (w, d) = (self.width, self.input_dim);
        let (w1, rest) = self.params.split_at(w * d);
        let (b1, rest) = rest.split_at(w);
        let (w2, rest) = rest.split_at(w);
        (w1, b1, w2, rest[0])
    }

    pub fn forward(&self, x: &[T]) -> T {
        let (w1, b1, w2, b2) = self.split();
        let d = self.input_dim;
        let mut z = b2;
        for j in 0..self.width {
            let pre = dot(&w1[j * d..(j + 1) * d], x) + b1[j];
            if pre > T::zero() {
                z = z + w2[j] * pre;
            }
        }
        self.cap * sigmoid(z)
    }

    /// Adds `weight · ∂τ/∂params` into `out`; returns τ(x). The ReLU uses
    /// subgradient 0 at the kink.
    pub fn accumulate_grad(&self, x: &[T], weight: T, out: &mut [T]) -> T {
        let (w1, b1, w2, b2) = self.split();
        let (w, d) = (self.width, self.input_dim);
        let mut h = vec![T::zero(); w];
        let mut z = b2;
        for j in 0..w {
            let pre = dot(&w1[j * d..(j + 1) * d], x) + b1[j];
            if pre > T::zero() {
                h[j] = pre;
                z = z + w2[j] * pre;
            }
        }
        let sg = sigmoid(z);
        let g = weight * self.cap * sg * (T::one() - sg);
        let (ow1, rest) = out.split_at_mut(w * d);
        let (ob1, rest) = rest.split_at_mut(w);
        let (ow2, ob2) = rest.split_at_mut(w);
        ob2[0] = ob2[0] + g;
        for j in 0..w {
            if h[j] > T::zero() {
                ow2[j] = ow2[j] + g * h[j];
                let gj = g * w2[j];
                ob1[j] = ob1[j] + gj;
                for (o, &xk) in ow1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *o = *o + gj * xk;
                }
            }
        }
        self.cap * sg
    }

    pub fn tau_forward(&self, fm: &FeatureMap<T>, s: &[T], a: usize) -> Result<T> {
        Ok(self.forward(&fm.featurize(s, a)?))
    }

    /// ∂τ(s, a)/∂params by backpropagation.
    pub fn tau_grad(&self, fm: &FeatureMap<T>, s: &[T], a: usize) -> Result<Vec<T>> {
        let x = fm.featurize(s, a)?;
        let mut g = vec![T::zero(); self.params.len()];
        self.accumulate_grad(&x, T::one(), &mut g);
        Ok(g)
    }
}

/// The importance-weight class Ω used by the trainer and the interval code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum TauModel<T> {
    Linear(LinearTau<T>),
    Network(TauNetwork<T>),
}

impl<T: Scalar> TauModel<T> {
    pub fn forward(&self, x: &[T]) -> T {
        match self {
            TauModel::Linear(t) => t.forward(x),
            TauModel::Network(t) => t.forward(x),
        }
    }

    pub fn accumulate_grad(&self, x: &[T], weight: T, out: &mut [T]) -> T {
        match self {
            TauModel::Linear(t) => t.accumulate_grad(x, weight, out),
            TauModel::Network(t) => t.accumulate_grad(x, weight, out),
        }
    }

    pub fn params(&self) -> &[T] {
        match self {
            TauModel::Linear(t) => &t.params,
            TauModel::Network(t) => &t.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        match self {
            TauModel::Linear(t) => &mut t.params,
            TauModel::Network(t) => &mut t.params,
        }
    }

    pub fn cap(&self) -> T {
        match self {
            TauModel::Linear(t) => t.cap,
            TauModel::Network(t) => t.cap,
        }
    }

    /// Diagonal metric for the scaled prox step: the feature second moment
    /// (plus ridge) on linear weights, 1 on biases and network weights.
    pub fn diagonal_metric(&self, feature_moment: &[T], ridge: T) -> Vec<T> {
        let mut m = vec![T::one(); self.params().len()];
        if let TauModel::Linear(_) = self {
            for (mi, &f) in m.iter_mut().zip(feature_moment) {
                *mi = f + ridge;
            }
        }
        m
    }
}
