//! Bi-level pessimistic offline policy optimisation.
//!
//! The crate estimates a conservative value for a target policy from a fixed
//! batch of transitions, builds confidence intervals for that value, and
//! trains policies against the pessimistic estimate with a penalised
//! adversarial saddle-point method.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod core;
pub mod detection;
pub mod envs;
pub mod error;
pub mod experiments;
pub mod ope;
pub mod optimizer;
pub mod scalar;

pub use crate::core::{OfflineDataset, TrainConfig, TrainTrace, Transition};
pub use crate::detection::{DetectionFunction, DetectionKind};
pub use crate::error::{Error, Result};
pub use crate::scalar::Scalar;

pub type Dataset = core::OfflineDataset<f64>;
pub type Detection = detection::DetectionFunction<f64>;
pub type Features = approx::FeatureMap<f64>;
pub type QFunction = approx::LinearQ<f64>;
pub type Policy = approx::Policy<f64>;
pub type TauNet = approx::TauNetwork<f64>;
