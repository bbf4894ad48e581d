use serde::{Deserialize, Serialize};

/// What happened in one outer round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Estimated return of the policy produced at the end of the round, if an
    /// evaluator was supplied.
    pub mc_return: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub rounds: Vec<RoundRecord>,
    /// Index into the snapshot list of the reported policy.
    pub selected: usize,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,loss,grad_norm,mc_return\n");
        for r in &self.rounds {
            let mc = r.mc_return.map(|v| format!("{v:.10e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.10e},{:.10e},{}\n", r.round, r.loss, r.grad_norm, mc));
        }
        out
    }
}
