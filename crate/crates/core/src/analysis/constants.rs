use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::analysis::fixed_point::{solve_chi_star, solve_global, solve_local, FixedPointResult, SolverOptions};
use crate::analysis::Instance;
use crate::env::induced_chain;
use crate::error::{Error, Result};
use crate::lfa::{td_norms, ParamVec};
use crate::policy::{assumption45_budget, softmax_improve, BudgetInputs, BudgetReport};

const NORM_SLACK: f64 = 1e-12;
const MAX_ADMISSION_ROUNDS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub gamma: f64,
    pub beta: f64,
    pub n_actions: usize,
    pub c_a: f64,
    pub c_b: f64,
    pub c_proj: f64,
    pub c_proj_tilde: f64,
    pub g: f64,
    /// Smallest margin over environments and checked points.
    pub a: f64,
    /// Margin of each environment at `theta*`.
    pub a_per_env: Vec<f64>,
    pub tau_mix: usize,
    /// Mixing time of each environment, max over `theta = 0` and `theta*`.
    pub tau_per_env: Vec<usize>,
    pub c_mu: f64,
    pub budget: BudgetReport,
}

impl ConstantsReport {
    pub fn budget_inputs(&self) -> BudgetInputs {
        BudgetInputs {
            a: self.a,
            c_proj: self.c_proj,
            c_a: self.c_a,
            c_b: self.c_b,
            n_actions: self.n_actions,
            tau_mix: self.tau_mix,
        }
    }
}

/// `-lambda_max((A + A^T) / 2)`.
pub fn margin(a_bar: &DMatrix<f64>) -> f64 {
    let sym = (a_bar + a_bar.transpose()) * 0.5;
    let top = SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    -top
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Mixing time of every environment under `pi_theta`.
pub fn mixing_times(inst: &Instance, theta: &ParamVec) -> Result<Vec<usize>> {
    let policy = softmax_improve(theta, inst.features(), inst.beta())?;
    inst.envs()
        .iter()
        .map(|m| Ok(induced_chain(m, &policy)?.mixing_time(None)?.tau_mix))
        .collect()
}

/// Constants at `theta*`. `extra_points` are further parameters (local
/// optima, `chi*`) at which the margin is also evaluated.
pub fn constants(inst: &Instance, theta_star: &ParamVec, extra_points: &[ParamVec]) -> Result<ConstantsReport> {
    let gamma = inst.gamma();
    let c_a = 1.0 + gamma;
    let c_b = 1.0;
    let c_proj = inst.ball().radius;
    let c_proj_tilde = 4.0 * c_proj + 1.0;
    let g = c_a * c_proj_tilde + c_b;
    let a_per_env: Vec<f64> = inst.td_at(theta_star)?.iter().map(|p| margin(&p.a_mat)).collect();
    let mut a = a_per_env.iter().copied().fold(f64::INFINITY, f64::min);
    for p in extra_points {
        for td in inst.td_at(p)? {
            a = a.min(margin(&td.a_mat));
        }
    }
    let at_zero = mixing_times(inst, &ParamVec::zeros(inst.dim()))?;
    let at_star = mixing_times(inst, theta_star)?;
    let tau_per_env: Vec<usize> = at_zero.iter().zip(&at_star).map(|(x, y)| *x.max(y)).collect();
    let tau_mix = tau_per_env.iter().copied().max().unwrap_or(1);
    let n_actions = inst.features().n_actions();
    let c_mu = inst.beta() * n_actions as f64 * (1.0 + 4.0 * tau_mix as f64);
    let inputs = BudgetInputs { a, c_proj, c_a, c_b, n_actions, tau_mix };
    Ok(ConstantsReport {
        gamma,
        beta: inst.beta(),
        n_actions,
        c_a,
        c_b,
        c_proj,
        c_proj_tilde,
        g,
        a,
        a_per_env,
        tau_mix,
        tau_per_env,
        c_mu,
        budget: assumption45_budget(&inputs, inst.beta()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub pass: bool,
    pub detail: String,
}

impl Flag {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub bounded_features: Flag,
    pub negative_definite: Flag,
    pub projection_contains: Flag,
    pub ergodic_mixing: Flag,
    pub sharpness_budget: Flag,
    /// Largest `sqrt(sum_ij sup_z A_ij(z)^2)` over environments.
    pub a_entrywise_sup: f64,
    pub theta_star: Option<FixedPointResult>,
    pub constants: Option<ConstantsReport>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.flags().iter().all(|f| f.pass)
    }

    pub fn flags(&self) -> [&Flag; 5] {
        [
            &self.bounded_features,
            &self.negative_definite,
            &self.projection_contains,
            &self.ergodic_mixing,
            &self.sharpness_budget,
        ]
    }

    pub fn failures(&self) -> Vec<String> {
        let names = ["bounded_features", "negative_definite", "projection_contains", "ergodic_mixing", "sharpness_budget"];
        names
            .iter()
            .zip(self.flags())
            .filter(|(_, f)| !f.pass)
            .map(|(n, f)| format!("{n}: {}", f.detail))
            .collect()
    }
}

/// Evaluates every standing assumption on a concrete instance. Never
/// fails: problems are reported through the flags.
pub fn check_assumptions(inst: &Instance, opts: &SolverOptions) -> AssumptionReport {
    let c_a = 1.0 + inst.gamma();
    let max_phi = inst.features().max_norm();
    let mut per_a: f64 = 0.0;
    let mut per_b: f64 = 0.0;
    let mut sup: f64 = 0.0;
    let mut norm_error = None;
    for m in inst.envs() {
        match td_norms(m, inst.features()) {
            Ok(r) => {
                per_a = per_a.max(r.max_a_per_sample);
                per_b = per_b.max(r.max_b_per_sample);
                sup = sup.max(r.a_entrywise_sup);
            }
            Err(e) => norm_error = Some(e.to_string()),
        }
    }
    let bounded_features = match norm_error {
        Some(e) => Flag::new(false, e),
        None => Flag::new(
            max_phi <= 1.0 + NORM_SLACK && per_a <= c_a + NORM_SLACK && per_b <= 1.0 + NORM_SLACK,
            format!("max ||phi|| = {max_phi}, max_z ||A(z)|| = {per_a} (C_A = {c_a}), max_z ||b(z)|| = {per_b}"),
        ),
    };

    let mut report = AssumptionReport {
        bounded_features,
        negative_definite: Flag::new(false, "not evaluated"),
        projection_contains: Flag::new(false, "not evaluated"),
        ergodic_mixing: Flag::new(false, "not evaluated"),
        sharpness_budget: Flag::new(false, "not evaluated"),
        a_entrywise_sup: sup,
        theta_star: None,
        constants: None,
    };

    if let Err(e) = ergodicity_at(inst, &ParamVec::zeros(inst.dim())) {
        report.ergodic_mixing = Flag::new(false, format!("at theta = 0: {e}"));
        return report;
    }
    let star = match solve_global(inst, opts) {
        Ok(s) => s,
        Err(e) => {
            let detail = format!("fixed point unavailable: {e}");
            report.negative_definite = Flag::new(false, detail.clone());
            report.sharpness_budget = Flag::new(false, detail);
            report.ergodic_mixing = Flag::new(true, "ergodic at theta = 0; theta* unavailable");
            return report;
        }
    };
    if let Err(e) = ergodicity_at(inst, &star.theta) {
        report.ergodic_mixing = Flag::new(false, format!("at theta*: {e}"));
        report.theta_star = Some(star);
        return report;
    }
    let mut extra = Vec::new();
    if inst.envs().len() > 1 {
        for c in 0..inst.envs().len() {
            if let Ok(local) = solve_local(inst, c, opts) {
                extra.push(local.theta);
            }
        }
        if let Ok(chi) = solve_chi_star(inst, opts) {
            extra.push(chi.theta);
        }
    }
    match constants(inst, &star.theta, &extra) {
        Ok(c) => {
            report.ergodic_mixing = Flag::new(true, format!("tau_mix = {} (per env {:?})", c.tau_mix, c.tau_per_env));
            report.negative_definite = Flag::new(c.a > 0.0, format!("a = {:e}", c.a));
            report.sharpness_budget = Flag::new(
                c.budget.satisfied && c.a > 0.0,
                format!("lhs = {:e}, rhs = {:e}, max_beta = {:e}, beta = {:e}", c.budget.lhs, c.budget.rhs, c.budget.max_beta, c.beta),
            );
            report.constants = Some(c);
        }
        Err(e) => {
            report.ergodic_mixing = Flag::new(false, e.to_string());
        }
    }
    let norm = star.theta.norm();
    let radius = inst.ball().radius;
    report.projection_contains = Flag::new(norm <= radius, format!("||theta*|| = {norm}, radius = {radius}"));
    report.theta_star = Some(star);
    report
}

fn ergodicity_at(inst: &Instance, theta: &ParamVec) -> Result<()> {
    let policy = softmax_improve(theta, inst.features(), inst.beta())?;
    for (i, m) in inst.envs().iter().enumerate() {
        let chain = induced_chain(m, &policy)?;
        if !chain.pair_chain().is_ergodic() {
            return Err(Error::Ergodicity {
                chain: format!("environment {i}"),
                detail: "no power of the pair kernel is scrambling".into(),
            });
        }
        chain.mixing_time(None)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub beta: f64,
    pub report: AssumptionReport,
}

/// Picks the sharpness. With `beta` given, the instance is checked as is.
/// Otherwise `beta = min(1, max_beta)` is iterated to a joint fixed point,
/// since `max_beta` depends on `a` and `tau_mix`, which depend on `theta*`
/// and so on `beta`.
pub fn admit(inst: &Instance, beta: Option<f64>, opts: &SolverOptions) -> Result<Admission> {
    if let Some(b) = beta {
        let report = check_assumptions(&inst.with_beta(b), opts);
        return Ok(Admission { beta: b, report });
    }
    let mut b = 1.0;
    let mut last = None;
    for _ in 0..MAX_ADMISSION_ROUNDS {
        let report = check_assumptions(&inst.with_beta(b), opts);
        let Some(c) = &report.constants else {
            return Ok(Admission { beta: b, report });
        };
        if report.all_pass() {
            return Ok(Admission { beta: b, report });
        }
        if c.a <= 0.0 {
            return Ok(Admission { beta: b, report });
        }
        let next = c.budget.max_beta.min(1.0) * (1.0 - 1e-9);
        if next == b {
            last = Some(report);
            break;
        }
        b = next;
        last = Some(report);
    }
    let report = last.ok_or_else(|| Error::Assumption("admission made no progress".into()))?;
    Ok(Admission { beta: b, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{garnet, Mdp};
    use crate::lfa::{features_one_hot, ProjectionBall};

    fn inst(agents: &[Mdp], beta: f64) -> Instance {
        let m = &agents[0];
        let f = features_one_hot(m.n_states(), m.n_actions());
        Instance::new(agents, f, beta, ProjectionBall::default_for(m.n_pairs(), m.gamma())).unwrap()
    }

    #[test]
    fn margin_of_negative_identity() {
        assert!((margin(&(DMatrix::identity(3, 3) * -0.5)) - 0.5).abs() < 1e-15);
        assert!((spectral_norm(&DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0])) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn derived_constants() {
        let m = garnet(5, 3, 2, 0.9, 4).unwrap();
        let i = inst(&[m], 1e-3);
        let star = solve_global(&i, &SolverOptions::default()).unwrap();
        let c = constants(&i, &star.theta, &[]).unwrap();
        assert_eq!(c.c_a, 1.9);
        assert_eq!(c.c_proj_tilde, 4.0 * c.c_proj + 1.0);
        assert_eq!(c.g, c.c_a * c.c_proj_tilde + c.c_b);
        assert_eq!(c.c_mu, 1e-3 * 3.0 * (1.0 + 4.0 * c.tau_mix as f64));
    }

    #[test]
    fn periodic_chain_fails_mixing() {
        let m = Mdp::new(2, 1, 0.9, vec![0.0, 1.0, 1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let r = check_assumptions(&inst(&[m], 0.0), &SolverOptions::default());
        assert!(!r.ergodic_mixing.pass);
        assert!(!r.all_pass());
    }

    #[test]
    fn one_hot_passes_norm_bounds() {
        let m = garnet(5, 3, 2, 0.9, 4).unwrap();
        let r = check_assumptions(&inst(&[m], 0.0), &SolverOptions::default());
        assert!(r.bounded_features.pass, "{:?}", r.bounded_features);
    }

    #[test]
    fn admission_picks_budgeted_beta() {
        let a = garnet(5, 3, 2, 0.9, 1).unwrap();
        let b = garnet(5, 3, 2, 0.9, 2).unwrap();
        let adm = admit(&inst(&[a, b], 0.0), None, &SolverOptions::default()).unwrap();
        if adm.report.all_pass() {
            let c = adm.report.constants.as_ref().unwrap();
            assert!(adm.beta <= c.budget.max_beta.min(1.0));
            assert!(adm.beta > 0.0);
        } else {
            assert!(!adm.report.failures().is_empty());
        }
    }
}
