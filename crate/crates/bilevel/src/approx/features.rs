use serde::{Deserialize, Serialize};

use crate::core::OfflineDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// One-hot over (state id, action); the state id is `s[0]`.
    Tabular,
    /// e_a ⊗ (1, s) / √(1 + ‖s‖²), unit norm.
    Linear,
    /// Gaussian kernel rows against anchor points (sᵢ, e(aᵢ)).
    RbfRepresenter,
}

/// φ : S × A → R^d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeatureMap<T> {
    pub kind: FeatureKind,
    pub num_actions: usize,
    pub state_dim: usize,
    /// Tabular only.
    #[serde(default)]
    pub num_states: usize,
    /// RBF only: stacked (s, e(a)) anchor vectors.
    #[serde(default)]
    pub anchors: Vec<Vec<T>>,
    /// RBF only.
    #[serde(default)]
    pub bandwidth: T,
    /// RBF only: the vector e(a) appended to the state for action id a.
    #[serde(default)]
    pub action_embedding: Vec<Vec<T>>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn tabular(num_states: usize, num_actions: usize) -> Self {
        Self {
            kind: FeatureKind::Tabular,
            num_actions,
            state_dim: 1,
            num_states,
            anchors: Vec::new(),
            bandwidth: T::zero(),
            action_embedding: Vec::new(),
        }
    }

    pub fn linear(state_dim: usize, num_actions: usize) -> Self {
        Self {
            kind: FeatureKind::Linear,
            num_actions,
            state_dim,
            num_states: 0,
            anchors: Vec::new(),
            bandwidth: T::zero(),
            action_embedding: Vec::new(),
        }
    }

    pub fn rbf(anchors: Vec<Vec<T>>, action_embedding: Vec<Vec<T>>, bandwidth: T) -> Result<Self> {
        let num_actions = action_embedding.len();
        if num_actions == 0 || anchors.is_empty() {
            return Err(Error::Config("rbf features need anchors and an action embedding".into()));
        }
        let edim = action_embedding[0].len();
        if action_embedding.iter().any(|e| e.len() != edim) {
            return Err(Error::Config("ragged action embedding".into()));
        }
        let zdim = anchors[0].len();
        if zdim < edim || anchors.iter().any(|z| z.len() != zdim) {
            return Err(Error::Config("anchor dimension inconsistent with embedding".into()));
        }
        if !(bandwidth > T::zero()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self {
            kind: FeatureKind::RbfRepresenter,
            num_actions,
            state_dim: zdim - edim,
            num_states: 0,
            anchors,
            bandwidth,
            action_embedding,
        })
    }

    /// Representer features whose anchors are the dataset's own (sᵢ, aᵢ)
    /// pairs, thinned to at most `max_anchors` evenly spaced rows, with the
    /// rule-of-thumb bandwidth.
    pub fn rbf_from_dataset(ds: &OfflineDataset<T>, action_embedding: Vec<Vec<T>>, max_anchors: usize) -> Result<Self> {
        let bw = rbf_bandwidth_with(ds, &action_embedding)?;
        let n = ds.len();
        let m = max_anchors.max(1).min(n);
        let anchors = (0..m)
            .map(|j| {
                let t = &ds.transitions()[j * n / m];
                stack(&t.s, &action_embedding[t.a])
            })
            .collect();
        Self::rbf(anchors, action_embedding, bw)
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FeatureKind::Tabular => self.num_states * self.num_actions,
            FeatureKind::Linear => self.num_actions * (1 + self.state_dim),
            FeatureKind::RbfRepresenter => self.anchors.len(),
        }
    }

    pub fn featurize(&self, s: &[T], a: usize) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.dim()];
        self.featurize_into(s, a, &mut out)?;
        Ok(out)
    }

    pub fn featurize_into(&self, s: &[T], a: usize, out: &mut [T]) -> Result<()> {
        if a >= self.num_actions {
            return Err(Error::Index(format!("action {a} >= {}", self.num_actions)));
        }
        match self.kind {
            FeatureKind::Tabular => {
                let id = self.state_id(s)?;
                out.iter_mut().for_each(|x| *x = T::zero());
                out[id * self.num_actions + a] = T::one();
            }
            FeatureKind::Linear => {
                if s.len() != self.state_dim {
                    return Err(Error::Schema(format!("state dim {} != {}", s.len(), self.state_dim)));
                }
                let scale = T::one() / (T::one() + s.iter().map(|&x| x * x).sum::<T>()).sqrt();
                out.iter_mut().for_each(|x| *x = T::zero());
                let base = a * (1 + self.state_dim);
                out[base] = scale;
                for (k, &x) in s.iter().enumerate() {
                    out[base + 1 + k] = x * scale;
                }
            }
            FeatureKind::RbfRepresenter => {
                if s.len() != self.state_dim {
                    return Err(Error::Schema(format!("state dim {} != {}", s.len(), self.state_dim)));
                }
                let e = &self.action_embedding[a];
                let denom = T::of(2.0) * self.bandwidth * self.bandwidth;
                for (o, z) in out.iter_mut().zip(&self.anchors) {
                    let mut d2 = T::zero();
                    for (&x, &y) in s.iter().chain(e).zip(z) {
                        d2 = d2 + (x - y) * (x - y);
                    }
                    *o = (-d2 / denom).exp();
                }
            }
        }
        Ok(())
    }

    pub fn state_id(&self, s: &[T]) -> Result<usize> {
        let x = s.first().copied().ok_or_else(|| Error::Index("empty state".into()))?;
        let id = x.round();
        if !(id >= T::zero()) || (x - id).abs() > T::of(1e-6) {
            return Err(Error::Index(format!("{x} is not a tabular state id")));
        }
        let id = id.to_usize().unwrap_or(usize::MAX);
        if id >= self.num_states {
            return Err(Error::Index(format!("state {id} >= {}", self.num_states)));
        }
        Ok(id)
    }

    /// Row-major `n × d` design matrix of φ(sᵢ, aᵢ).
    pub fn design(&self, ds: &OfflineDataset<T>) -> Result<Vec<T>> {
        let d = self.dim();
        let mut out = vec![T::zero(); ds.len() * d];
        for (row, t) in out.chunks_mut(d).zip(ds.transitions()) {
            self.featurize_into(&t.s, t.a, row)?;
        }
        Ok(out)
    }

    /// `|A| × d` block of φ(s, a) for every action, row-major.
    pub fn all_actions(&self, s: &[T]) -> Result<Vec<T>> {
        let d = self.dim();
        let mut out = vec![T::zero(); self.num_actions * d];
        for (a, row) in out.chunks_mut(d).enumerate() {
            self.featurize_into(s, a, row)?;
        }
        Ok(out)
    }
}

fn stack<T: Scalar>(s: &[T], e: &[T]) -> Vec<T> {
    s.iter().chain(e).copied().collect()
}

/// Integer action ids used as a one-coordinate embedding.
pub fn scalar_action_embedding<T: Scalar>(num_actions: usize) -> Vec<Vec<T>> {
    (0..num_actions).map(|a| vec![T::from_usize_lossy(a)]).collect()
}

/// Rule-of-thumb bandwidth `1.06 · σ̂ · n^{-1/5}` of the stacked (s, a)
/// vectors, actions entering through their integer id.
pub fn rbf_bandwidth<T: Scalar>(ds: &OfflineDataset<T>) -> Result<T> {
    rbf_bandwidth_with(ds, &scalar_action_embedding(ds.num_actions()))
}

/// As [`rbf_bandwidth`] with an explicit action embedding. σ̂ is the root
/// mean of the per-coordinate variances.
pub fn rbf_bandwidth_with<T: Scalar>(ds: &OfflineDataset<T>, embedding: &[Vec<T>]) -> Result<T> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::Degenerate("need at least two rows for a bandwidth".into()));
    }
    if embedding.len() < ds.num_actions() {
        return Err(Error::Config("embedding shorter than the action set".into()));
    }
    let z: Vec<Vec<T>> = ds.transitions().iter().map(|t| stack(&t.s, &embedding[t.a])).collect();
    let dim = z[0].len();
    let nt = T::from_usize_lossy(n);
    let mut pooled = T::zero();
    for k in 0..dim {
        let mean = z.iter().map(|v| v[k]).sum::<T>() / nt;
        let var = z.iter().map(|v| (v[k] - mean) * (v[k] - mean)).sum::<T>() / (nt - T::one());
        pooled = pooled + var;
    }
    let sigma = (pooled / T::from_usize_lossy(dim)).sqrt();
    if !(sigma > T::zero()) {
        return Err(Error::Degenerate("zero variance in the stacked (s, a) sample".into()));
    }
    Ok(T::of(1.06) * sigma * nt.powf(T::of(-0.2)))
}
