//! Function classes: feature maps, linear q-functions, softmax policies and
//! importance-weight models.

mod features;
mod policy;
mod q;
mod tau;

pub use features::{rbf_bandwidth, rbf_bandwidth_with, scalar_action_embedding, FeatureKind, FeatureMap};
pub use policy::{policy_probs, softmax, Policy, SoftmaxPolicy, TabularPolicy};
pub use q::{project_ball, project_ball_in_place, LinearQ};
pub use tau::{unit_bias, LinearTau, TauModel, TauNetwork};
