use serde::{Deserialize, Serialize};

use crate::analysis::constants::ConstantsReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Single-agent SARSA.
    Single,
    /// Federated SARSA.
    Federated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub eta: f64,
    pub h: usize,
    pub n_agents: usize,
    pub rounds: usize,
    /// `|| theta_0 - theta* ||^2`.
    pub init_dist_sq: f64,
    /// Trajectories start from the stationary law (drops the `1/H^2` term).
    pub stationary_start: bool,
    pub zeta_a: f64,
    pub zeta_theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub mode: BoundMode,
    /// Bound at rounds `0..=rounds`.
    pub per_round: Vec<f64>,
    /// Sum of the terms that do not decay with `t`.
    pub limit: f64,
    pub contraction: f64,
    pub heterogeneity_term: f64,
    pub variance_term: f64,
    pub burn_in_term: f64,
    pub step_term: f64,
}

/// Closed-form mean-squared-error bounds, evaluated per round.
pub fn theorem_rhs(c: &ConstantsReport, x: &BoundInputs, mode: BoundMode) -> BoundCurve {
    let (eta, a, g, tau, c_a) = (x.eta, c.a, c.g, c.tau_mix as f64, c.c_a);
    let h = x.h as f64;
    let delta = if x.stationary_start { 0.0 } else { 1.0 };
    let (contraction, heterogeneity_term, variance_term, burn_in_term, step_term) = match mode {
        BoundMode::Single => (
            1.0 - eta * a * h / 4.0,
            0.0,
            544.0 * eta * tau * g * g / a,
            delta * 232.0 * tau * tau * g * g / (h * h * a * a),
            3904.0 * eta * eta * tau * tau * g * g * c_a * c_a / (a * a),
        ),
        BoundMode::Federated => (
            1.0 - eta * a * h / 8.0,
            72.0 * eta * eta * (h - 1.0).powi(2) * x.zeta_a.powi(2) * x.zeta_theta.powi(2) / (a * a),
            1088.0 * eta * tau * g * g / (x.n_agents as f64 * a),
            delta * 464.0 * g * g * tau * tau / (h * h * a * a),
            7808.0 * eta * eta * g * g * c_a * c_a * tau * tau / (a * a),
        ),
    };
    let limit = heterogeneity_term + variance_term + burn_in_term + step_term;
    let per_round = (0..=x.rounds)
        .map(|t| contraction.max(0.0).powi(t as i32) * x.init_dist_sq + limit)
        .collect();
    BoundCurve { mode, per_round, limit, contraction, heterogeneity_term, variance_term, burn_in_term, step_term }
}
