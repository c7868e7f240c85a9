use serde::{Deserialize, Serialize};

use crate::analysis::constants::{spectral_norm, ConstantsReport};
use crate::analysis::fixed_point::{solve_local, solve_theta_tilde, SolverOptions};
use crate::analysis::Instance;
use crate::env::{max_reward_gap, max_row_tv, Mdp};
use crate::error::Result;
use crate::lfa::{ParamVec, TdPair};

/// Largest kernel-row TV over every pair of environments.
pub fn kernel_heterogeneity(envs: &[Mdp]) -> f64 {
    pairwise_max(envs, max_row_tv)
}

/// Largest reward gap over every pair of environments.
pub fn reward_heterogeneity(envs: &[Mdp]) -> f64 {
    pairwise_max(envs, |a, b| max_reward_gap(a.rewards(), b.rewards()))
}

fn pairwise_max(envs: &[Mdp], f: impl Fn(&Mdp, &Mdp) -> f64) -> f64 {
    let mut out: f64 = 0.0;
    for i in 0..envs.len() {
        for j in i + 1..envs.len() {
            out = out.max(f(&envs[i], &envs[j]));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    pub eps_p: f64,
    pub eps_r: f64,
    pub tau_mix: usize,
    pub a: f64,
    pub theta_star_norm: f64,
    pub zeta_a: f64,
    pub zeta_theta: f64,
    pub measured_zeta_a: f64,
    pub measured_zeta_theta: f64,
    pub zeta_a_holds: bool,
    pub zeta_theta_holds: bool,
    /// `|| theta*^(c) - theta* ||` per distinct environment.
    pub local_gaps: Vec<f64>,
    /// Agent-averaged `|| theta*^(c) - theta* ||^2`.
    pub local_mse: f64,
    /// `(96/95) zeta_theta / a`.
    pub local_gap_bound: f64,
    /// `(576/95)(1 + tau)(eps_p ||theta*|| + eps_r)`, without the `1/a`.
    pub local_gap_bound_displayed: f64,
    pub local_gap_holds: bool,
    pub local_stars: Vec<ParamVec>,
    pub theta_tildes: Vec<ParamVec>,
}

/// Heterogeneity measures and the inequalities relating them, at a solved
/// `theta*`.
pub fn heterogeneity_report(
    inst: &Instance,
    theta_star: &ParamVec,
    constants: &ConstantsReport,
    opts: &SolverOptions,
) -> Result<HeterogeneityReport> {
    let envs = inst.envs();
    let eps_p = kernel_heterogeneity(envs);
    let eps_r = reward_heterogeneity(envs);
    let tau = constants.tau_mix as f64;
    let norm = theta_star.norm();
    let zeta_a = 4.0 * constants.c_a * (1.0 + tau) * eps_p;
    let zeta_theta = 6.0 * (1.0 + tau) * (eps_p * norm + eps_r);

    let tds = inst.td_at(theta_star)?;
    let mean = inst.average(&tds);
    let tildes = tds.iter().map(solve_theta_tilde).collect::<Result<Vec<_>>>()?;
    let (measured_zeta_a, measured_zeta_theta) = measured_zetas(&tds, &mean, &tildes, theta_star);

    let mut local_stars = Vec::with_capacity(envs.len());
    if envs.len() == 1 {
        local_stars.push(theta_star.clone());
    } else {
        for c in 0..envs.len() {
            local_stars.push(solve_local(inst, c, opts)?.theta);
        }
    }
    let local_gaps: Vec<f64> = local_stars.iter().map(|s| s.dist_sq(theta_star).sqrt()).collect();
    let local_mse = local_gaps.iter().zip(inst.weights()).map(|(g, w)| w * g * g).sum();
    let local_gap_bound = 96.0 / 95.0 * zeta_theta / constants.a;
    let slack = 10.0 * opts.tol;
    Ok(HeterogeneityReport {
        eps_p,
        eps_r,
        tau_mix: constants.tau_mix,
        a: constants.a,
        theta_star_norm: norm,
        zeta_a,
        zeta_theta,
        measured_zeta_a,
        measured_zeta_theta,
        zeta_a_holds: measured_zeta_a <= zeta_a + 1e-12,
        zeta_theta_holds: measured_zeta_theta <= zeta_theta + 1e-12,
        local_gap_holds: constants.a > 0.0 && local_gaps.iter().all(|g| *g <= local_gap_bound + slack),
        local_gaps,
        local_mse,
        local_gap_bound,
        local_gap_bound_displayed: 576.0 / 95.0 * (1.0 + tau) * (eps_p * norm + eps_r),
        local_stars,
        theta_tildes: tildes,
    })
}

/// `max_c ||A^(c) - A_bar||` and `max_c ||A^(c) (theta_tilde^(c) - theta*)||`.
pub fn measured_zetas(tds: &[TdPair], mean: &TdPair, tildes: &[ParamVec], theta_star: &ParamVec) -> (f64, f64) {
    let star = theta_star.to_dvector();
    let mut za: f64 = 0.0;
    let mut zt: f64 = 0.0;
    for (td, tilde) in tds.iter().zip(tildes) {
        za = za.max(spectral_norm(&(&td.a_mat - &mean.a_mat)));
        zt = zt.max((&td.a_mat * (tilde.to_dvector() - &star)).norm());
    }
    (za, zt)
}
