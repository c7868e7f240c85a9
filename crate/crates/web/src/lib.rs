//! Browser bindings. Every export takes plain numbers and returns a JSON
//! string: either the result or `{"error": {"kind", "message"}}`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use fedsarsa::analysis::{constants, drift_delta, heterogeneity_report, SolverOptions};
use fedsarsa::experiment::{self, ExperimentSpec, Prepared};
use fedsarsa::train::{run_fedsarsa, RunConfig, Targets};
use fedsarsa::Error;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

const MAX_SAMPLES: usize = 5_000_000;

fn respond<T: Serialize>(r: fedsarsa::Result<T>) -> String {
    match r.and_then(|v| Ok(serde_json::to_string(&v)?)) {
        Ok(s) => s,
        Err(e) => json!({"error": {"kind": e.kind(), "message": e.to_string()}}).to_string(),
    }
}

fn prepare(env_seed: u32) -> fedsarsa::Result<(ExperimentSpec, Prepared)> {
    let spec = ExperimentSpec { env_seed: env_seed as u64, ..ExperimentSpec::default() };
    let p = experiment::prepare(&spec)?;
    Ok((spec, p))
}

#[derive(Serialize)]
struct Curve {
    beta: f64,
    step_size: f64,
    samples_per_agent: Vec<f64>,
    mse_theta_star: Vec<f64>,
    mse_chi_star: Vec<f64>,
}

/// One FedSARSA run on the admitted Garnet pair, logged at about 400
/// points.
#[wasm_bindgen]
pub fn simulate(env_seed: u32, n_agents: u32, local_steps: u32, rounds: u32, step_size: f64, seed: u32) -> String {
    respond(simulate_inner(env_seed, n_agents as usize, local_steps as usize, rounds as usize, step_size, seed as u64))
}

fn simulate_inner(env_seed: u32, n: usize, h: usize, rounds: usize, eta: f64, seed: u64) -> fedsarsa::Result<Curve> {
    if n.saturating_mul(h).saturating_mul(rounds) > MAX_SAMPLES * 10 || h.saturating_mul(rounds) > MAX_SAMPLES {
        return Err(Error::Config(format!("at most {MAX_SAMPLES} samples per agent in the browser")));
    }
    let (_, p) = prepare(env_seed)?;
    let mut c = RunConfig::new(n, h, rounds, p.beta());
    c.step_size = (eta > 0.0).then_some(eta);
    c.master_seed = seed;
    c.log_every = (rounds / 400).max(1);
    c.waive_assumptions = true;
    let targets = Targets { theta_star: Some(p.theta_star.clone()), chi_star: Some(p.chi_star.clone()) };
    let rec = run_fedsarsa(&c, &p.envs, &targets)?;
    Ok(Curve {
        beta: p.beta(),
        step_size: rec.config.step_size.unwrap_or_default(),
        samples_per_agent: rec.rows.iter().map(|r| r.samples_per_agent).collect(),
        mse_theta_star: rec.rows.iter().map(|r| r.mse_theta_star).collect(),
        mse_chi_star: rec.rows.iter().map(|r| r.mse_chi_star).collect(),
    })
}

/// Agent-averaged gap between local and federated fixed points over the
/// `(eps_p, eps_r)` grid `{0, 0.1, 0.5, 1}^2`.
#[wasm_bindgen]
pub fn heterogeneity_grid(env_seed: u32) -> String {
    respond(prepare(env_seed).and_then(|(spec, p)| Ok(experiment::table1_compute(&spec, &p)?.0)))
}

#[derive(Serialize)]
struct DriftCurve {
    step_size: f64,
    local_steps: Vec<usize>,
    drift_norm: Vec<f64>,
    second_order_bound: Vec<f64>,
    crude_bound: f64,
}

/// Norm of the heterogeneity drift at `theta*` for `H = 1, 2, 4, ...` up
/// to `max_local_steps`.
#[wasm_bindgen]
pub fn drift_curve(env_seed: u32, step_size: f64, max_local_steps: u32) -> String {
    respond(drift_inner(env_seed, step_size, max_local_steps as usize))
}

fn drift_inner(env_seed: u32, eta: f64, max_h: usize) -> fedsarsa::Result<DriftCurve> {
    if !(eta > 0.0) || max_h == 0 {
        return Err(Error::Config("step size must be positive and max_local_steps at least 1".into()));
    }
    let (_, p) = prepare(env_seed)?;
    let opts = SolverOptions::default();
    let consts = constants(&p.instance, &p.theta_star, &[])?;
    let het = heterogeneity_report(&p.instance, &p.theta_star, &consts, &opts)?;
    let tds = p.instance.td_at(&p.theta_star)?;
    let hs: Vec<usize> = std::iter::successors(Some(1usize), |h| h.checked_mul(2)).take_while(|h| *h <= max_h).collect();
    let mut out = DriftCurve { step_size: eta, local_steps: hs.clone(), drift_norm: Vec::new(), second_order_bound: Vec::new(), crude_bound: 0.0 };
    for h in hs {
        let d = drift_delta(
            &tds,
            p.instance.weights(),
            &het.theta_tildes,
            &p.theta_star,
            eta,
            h,
            (het.zeta_a, het.zeta_theta),
            consts.c_a,
            consts.c_proj_tilde,
        )?;
        out.drift_norm.push(d.norm);
        out.second_order_bound.push(d.second_order_bound);
        out.crude_bound = d.crude_bound;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn simulate_reduces_error() {
        let v = parse(&simulate(0, 4, 10, 200, 0.02, 1));
        let mse = v["mse_theta_star"].as_array().unwrap();
        assert!(mse.last().unwrap().as_f64().unwrap() < mse[0].as_f64().unwrap());
    }

    #[test]
    fn oversized_runs_are_refused() {
        let v = parse(&simulate(0, 200, 10_000, 10_000, 0.0, 1));
        assert_eq!(v["error"]["kind"], "config");
    }

    #[test]
    fn grid_has_sixteen_cells() {
        let v = parse(&heterogeneity_grid(0));
        assert_eq!(v["cells"].as_array().unwrap().len(), 16);
    }

    #[test]
    fn drift_starts_at_zero() {
        let v = parse(&drift_curve(0, 1e-3, 64));
        let norms = v["drift_norm"].as_array().unwrap();
        assert_eq!(norms.len(), 7);
        assert!(norms[0].as_f64().unwrap() < 1e-12);
        assert!(norms[6].as_f64().unwrap() > norms[1].as_f64().unwrap());
        assert_eq!(parse(&drift_curve(0, -1.0, 4))["error"]["kind"], "config");
    }
}
