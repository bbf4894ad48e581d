use serde::{Deserialize, Serialize};

use super::{FeatureMap, Policy};
use crate::error::Result;
use crate::scalar::{dot, norm, Scalar};

/// q(s, a) = ⟨φ(s, a), θ⟩ with ‖θ‖ ≤ radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearQ<T> {
    pub theta: Vec<T>,
    pub radius: T,
}

impl<T: Scalar> LinearQ<T> {
    pub fn zeros(dim: usize, radius: T) -> Self {
        Self {
            theta: vec![T::zero(); dim],
            radius,
        }
    }

    pub fn q_value(&self, fm: &FeatureMap<T>, s: &[T], a: usize) -> Result<T> {
        Ok(dot(&fm.featurize(s, a)?, &self.theta))
    }

    /// q(s, π) = Σ_a π(a|s) q(s, a).
    pub fn q_expect(&self, fm: &FeatureMap<T>, pi: &Policy<T>, s: &[T]) -> Result<T> {
        let probs = pi.probs(s)?;
        let mut acc = T::zero();
        for (a, &p) in probs.iter().enumerate() {
            if p > T::zero() {
                acc = acc + p * self.q_value(fm, s, a)?;
            }
        }
        Ok(acc)
    }
}

/// Euclidean projection onto the ball of the given radius.
pub fn project_ball<T: Scalar>(v: &[T], radius: T) -> Vec<T> {
    let mut out = v.to_vec();
    project_ball_in_place(&mut out, radius);
    out
}

pub fn project_ball_in_place<T: Scalar>(v: &mut [T], radius: T) {
    let n = norm(v);
    if n > radius {
        let s = radius / n;
        v.iter_mut().for_each(|x| *x = *x * s);
    }
}
