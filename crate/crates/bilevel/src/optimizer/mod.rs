//! Penalised adversarial trainer: loss, inner q-minimisation, proximal
//! τ-ascent and the entropic mirror policy update.

mod batch;
mod ops;
mod train;

pub use batch::{expected_features, Batch, LossParts};
pub use ops::{
    adversarial_loss, adversarial_loss_parts, behavior_clone, eta_schedule, eta_theory, hyperparam_rule, mirror_policy_update,
    prox_tau_step, prox_tau_step_scaled, solve_inner_q, tau_gradient, theory_iterate_weights, zeta_default,
    zeta_precondition_met,
};
pub use train::{initial_policy, train, train_with, Evaluator, SaddleState, TrainHooks, TrainOutput};

pub(crate) use ops::apply_step;
