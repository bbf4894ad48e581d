use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bregman geometry of the proximal steps on θ and ψ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// ½‖ψ − ψ'‖²; the prox is a plain gradient step.
    #[default]
    Euclidean,
    /// ½(ψ − ψ')ᵀM(ψ − ψ') with M the diagonal of the empirical feature
    /// second moment plus `ridge`; the prox is a diagonally scaled step.
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauModelKind {
    /// τ = cap·σ(⟨φ, ψ⟩ + b).
    #[default]
    Linear,
    /// Two-layer ReLU network on φ(s, a).
    Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputRule {
    /// Draw one snapshot uniformly with the run seed.
    #[default]
    RandomSnapshot,
    /// Report the uniform mixture over snapshots.
    Mixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInit {
    #[default]
    Uniform,
    /// Empirical action frequencies per tabular state (uniform where unseen).
    /// Only meaningful for tabular policies.
    BehaviorClone,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// η_t = η0 / (1 + 0.3·t^{1/4}).
    #[default]
    Decay,
    /// η_t = min{(t·T·4G²/(σ⁴C₁))^{1/4}, 1/C₁} with user constants, and the
    /// returned inner iterate drawn with mass ∝ 2η_t − η_t²C₁.
    Theory,
}

/// Flat training configuration; every field has a default so partial TOML
/// files are accepted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub c_star: f64,
    pub zeta: f64,
    pub eta0: f64,
    pub inner_steps: usize,
    pub outer_rounds: usize,
    pub q_radius: f64,
    pub tau_cap: f64,
    pub seed: u64,
    pub delta: f64,
    /// Step size of the projected subgradient steps on θ.
    pub q_lr: f64,
    /// θ steps per inner iteration.
    pub q_steps: usize,
    pub geometry: Geometry,
    pub ridge: f64,
    pub tau_model: TauModelKind,
    pub tau_width: usize,
    pub output: OutputRule,
    pub policy_init: PolicyInit,
    /// 0 means full batch.
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub theory_g: f64,
    pub theory_sigma: f64,
    pub theory_c1: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            c_star: 1.0,
            zeta: 3e-3,
            eta0: 1e-3,
            inner_steps: 100,
            outer_rounds: 10,
            q_radius: 100.0,
            tau_cap: 10.0,
            seed: 0,
            delta: 0.1,
            q_lr: 5e-3,
            q_steps: 1,
            geometry: Geometry::Euclidean,
            ridge: 1e-3,
            tau_model: TauModelKind::Linear,
            tau_width: 32,
            output: OutputRule::RandomSnapshot,
            policy_init: PolicyInit::Uniform,
            batch_size: 0,
            schedule: StepSchedule::Decay,
            theory_g: 1.0,
            theory_sigma: 1.0,
            theory_c1: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let nonneg = [
            ("lambda", self.lambda),
            ("c_star", self.c_star),
            ("zeta", self.zeta),
            ("ridge", self.ridge),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        let pos = [
            ("eta0", self.eta0),
            ("q_radius", self.q_radius),
            ("q_lr", self.q_lr),
            ("theory_g", self.theory_g),
            ("theory_sigma", self.theory_sigma),
            ("theory_c1", self.theory_c1),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        if self.outer_rounds == 0 {
            return bad("outer_rounds must be >= 1".into());
        }
        if self.q_steps == 0 {
            return bad("q_steps must be >= 1".into());
        }
        if self.tau_width == 0 {
            return bad("tau_width must be >= 1".into());
        }
        if !(self.tau_cap > 1.0 && self.tau_cap.is_finite()) {
            // cap == 1 would make the τ ≡ 1 initialisation sit on the boundary of the sigmoid
            return bad(format!("tau_cap must be > 1, got {}", self.tau_cap));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        Ok(())
    }
}
