use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// Explicit probability rows, one per tabular state id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TabularPolicy<T> {
    pub probs: Vec<Vec<T>>,
}

impl<T: Scalar> TabularPolicy<T> {
    pub fn new(probs: Vec<Vec<T>>) -> Result<Self> {
        let a = probs.first().map(|r| r.len()).unwrap_or(0);
        if a == 0 {
            return Err(Error::Schema("policy needs at least one state and action".into()));
        }
        for (s, row) in probs.iter().enumerate() {
            let z: T = row.iter().copied().sum();
            if row.len() != a
                || row.iter().any(|&p| !(p >= T::zero()))
                || (z - T::one()).abs() > T::of(1e-9).max(T::epsilon() * T::from_usize_lossy(4 * a))
            {
                return Err(Error::Schema(format!("row {s} is not a probability vector")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = T::one() / T::from_usize_lossy(num_actions);
        Self {
            probs: vec![vec![p; num_actions]; num_states],
        }
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn row(&self, s: &[T]) -> Result<&[T]> {
        let x = s.first().copied().ok_or_else(|| Error::Index("empty state".into()))?;
        let id = x.round().to_usize().filter(|_| (x - x.round()).abs() < T::of(1e-6));
        match id {
            Some(i) if i < self.probs.len() => Ok(&self.probs[i]),
            _ => Err(Error::Index(format!("{x} is not a state id of this policy"))),
        }
    }
}

/// π_ω(a|s) ∝ exp⟨φ(s, a), ω⟩.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SoftmaxPolicy<T> {
    pub omega: Vec<T>,
    /// ‖ω‖ bound; infinite means unconstrained and is written as `null`.
    #[serde(with = "radius_serde")]
    pub radius: T,
    pub features: FeatureMap<T>,
}

impl<T: Scalar> SoftmaxPolicy<T> {
    pub fn uniform(features: FeatureMap<T>, radius: T) -> Self {
        Self {
            omega: vec![T::zero(); features.dim()],
            radius,
            features,
        }
    }

    pub fn logits(&self, s: &[T]) -> Result<Vec<T>> {
        let d = self.features.dim();
        let block = self.features.all_actions(s)?;
        Ok(block.chunks(d).map(|phi| dot(phi, &self.omega)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Policy<T> {
    Tabular(TabularPolicy<T>),
    Softmax(SoftmaxPolicy<T>),
}

impl<T: Scalar> Policy<T> {
    pub fn probs(&self, s: &[T]) -> Result<Vec<T>> {
        match self {
            Policy::Tabular(p) => Ok(p.row(s)?.to_vec()),
            Policy::Softmax(p) => Ok(softmax(&p.logits(s)?)),
        }
    }

    pub fn num_actions(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.num_actions(),
            Policy::Softmax(p) => p.features.num_actions,
        }
    }
}

/// Spec-facing name for [`Policy::probs`].
pub fn policy_probs<T: Scalar>(pi: &Policy<T>, s: &[T]) -> Result<Vec<T>> {
    pi.probs(s)
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|p| *p = *p / z);
    out
}

mod radius_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<T: Scalar, S: Serializer>(r: &T, s: S) -> Result<S::Ok, S::Error> {
        let v = r.to_f64_lossy();
        if v.is_finite() {
            s.serialize_some(&v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map_or(T::infinity(), T::of))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_omega_is_uniform() {
        let pi = Policy::Softmax(SoftmaxPolicy::uniform(FeatureMap::<f64>::linear(2, 4), 1e6));
        for p in pi.probs(&[0.2, 3.0]).unwrap() {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn two_thirds() {
        let p = softmax(&[2f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn overflow_safe() {
        let p = softmax(&[1000.0f64, 999.0]);
        assert!(p.iter().all(|x| x.is_finite()));
        let p32 = softmax(&[100.0f32, 0.0]);
        assert!(p32[0] > 0.999);
    }

    #[test]
    fn tabular_validation() {
        assert!(TabularPolicy::new(vec![vec![0.5f64, 0.6]]).is_err());
        assert!(TabularPolicy::new(vec![vec![0.5f64, 0.5]]).is_ok());
    }
}
