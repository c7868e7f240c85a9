use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::Instance;
use crate::env::{average_environment, induced_chain, Mdp};
use crate::error::{Error, Result};
use crate::lfa::{project, project_in_place, ParamVec, TdPair};
use crate::policy::softmax_improve;
use crate::rng::{Purpose, RngStream};

const TRACE_CAP: usize = 1000;
const DAMPING_FLOOR: f64 = 1e-6;
const POLISH_ITERS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target for `|| A_bar(theta) theta + b_bar(theta) ||`.
    pub tol: f64,
    pub max_iters: usize,
    /// Seeds the random and boundary initialisations.
    pub init_seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 10_000, init_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub theta: ParamVec,
    pub residual: f64,
    /// Residual re-evaluated from the matrix form of the pair chain.
    pub certified_residual: f64,
    pub iterations: usize,
    pub from_inits: Vec<ParamVec>,
    pub max_pairwise_gap: f64,
}

/// Starting points: the origin, a random interior point and a random point
/// on the boundary of the projection ball.
pub fn default_inits(inst: &Instance, seed: u64) -> Vec<ParamVec> {
    let d = inst.dim();
    let radius = inst.ball().radius;
    let mut stream = RngStream::new(seed, Purpose::Analysis, 0);
    let rng = stream.raw();
    let mut direction = || {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(move |x| x / n)
    };
    let interior = ParamVec(direction().map(|x| 0.5 * radius * x).collect());
    let boundary = ParamVec(direction().map(|x| radius * x).collect());
    vec![ParamVec::zeros(d), interior, boundary]
}

/// Solves `A_bar(theta) theta + b_bar(theta) = 0` over the ball.
///
/// Each iteration freezes the policy at the current `theta`, solves the
/// resulting linear system for `omega`, and moves a damped step towards
/// it: `theta <- Pi(theta + alpha (omega - theta))`. The damping `alpha`
/// halves whenever the residual would increase. When the frozen system is
/// singular the step falls back to `theta <- Pi(theta + eta kappa(theta))`.
pub fn solve_global(inst: &Instance, opts: &SolverOptions) -> Result<FixedPointResult> {
    solve_with_inits(inst, opts, default_inits(inst, opts.init_seed))
}

pub fn solve_with_inits(inst: &Instance, opts: &SolverOptions, inits: Vec<ParamVec>) -> Result<FixedPointResult> {
    if inits.is_empty() {
        return Err(Error::Config("solver needs at least one initialisation".into()));
    }
    let mut solutions = Vec::with_capacity(inits.len());
    let mut iterations = 0;
    for init in &inits {
        let (theta, residual, iters) = solve_from(inst, init, opts)?;
        iterations = iterations.max(iters);
        solutions.push((theta, residual));
    }
    let mut gap: f64 = 0.0;
    for i in 0..solutions.len() {
        for j in i + 1..solutions.len() {
            gap = gap.max(solutions[i].0.dist_sq(&solutions[j].0).sqrt());
        }
    }
    let limit = 10.0 * opts.tol;
    if gap > limit {
        return Err(Error::Uniqueness { gap, limit });
    }
    let (theta, residual) = solutions.swap_remove(0);
    let certified_residual = matrix_form_residual(inst, &theta)?;
    Ok(FixedPointResult {
        theta,
        residual,
        certified_residual,
        iterations,
        from_inits: inits,
        max_pairwise_gap: gap,
    })
}

fn solve_from(inst: &Instance, init: &ParamVec, opts: &SolverOptions) -> Result<(ParamVec, f64, usize)> {
    let ball = inst.ball();
    let fallback_eta = 0.5 / (1.0 + inst.gamma());
    let mut theta = project(init, ball);
    let mut td = inst.mean_td(&theta)?;
    let mut r = td.apply(&theta).norm();
    let mut trace = vec![r];
    let mut alpha: f64 = 1.0;
    let mut polish = 0;
    for it in 1..=opts.max_iters {
        let target = frozen_solution(&td, &theta, fallback_eta);
        let (cand, cand_td, cand_r) = loop {
            let mut c = theta.0.clone();
            for (x, w) in c.iter_mut().zip(target.iter()) {
                *x += alpha * (w - *x);
            }
            project_in_place(&mut c, ball);
            let c = ParamVec(c);
            let c_td = inst.mean_td(&c)?;
            let c_r = c_td.apply(&c).norm();
            if c_r <= r || alpha <= DAMPING_FLOOR || !c_r.is_finite() {
                break (c, c_td, c_r);
            }
            alpha *= 0.5;
        };
        if !cand_r.is_finite() {
            return Err(Error::Numeric { round: it, step: 0 });
        }
        let step = cand.dist_sq(&theta).sqrt();
        let improved = cand_r < r;
        if cand_r <= r {
            theta = cand;
            td = cand_td;
            r = cand_r;
            alpha = (2.0 * alpha).min(1.0);
        }
        if trace.len() < TRACE_CAP {
            trace.push(r);
        }
        if r <= opts.tol {
            polish += 1;
            let still = step <= 1e-14 * (1.0 + theta.norm());
            if still || !improved || polish >= POLISH_ITERS {
                return Ok((theta, r, it));
            }
        }
    }
    Err(Error::Solver { iterations: opts.max_iters, residual: r, trace })
}

fn frozen_solution(td: &TdPair, theta: &ParamVec, fallback_eta: f64) -> Vec<f64> {
    if let Some(w) = td.a_mat.clone().lu().solve(&(-&td.b_vec)) {
        if w.iter().all(|x| x.is_finite()) {
            return w.iter().copied().collect();
        }
    }
    let kappa = td.apply(theta);
    theta.0.iter().zip(kappa.iter()).map(|(t, k)| t + fallback_eta * k).collect()
}

/// Residual of the fixed-point equation through
/// `A_bar = Phi^T Xi (gamma Q - I) Phi` and `b_bar = Phi^T Xi r`, built
/// from the pair chain rather than by enumerating transitions.
pub fn matrix_form_residual(inst: &Instance, theta: &ParamVec) -> Result<f64> {
    let f = inst.features();
    let policy = softmax_improve(theta, f, inst.beta())?;
    let phi = f.matrix();
    let np = phi.nrows();
    let mut kappa = DVector::zeros(inst.dim());
    let theta_v = theta.to_dvector();
    for (m, w) in inst.envs().iter().zip(inst.weights()) {
        let chain = induced_chain(m, &policy)?;
        let xi = chain.stationary()?.over_pairs;
        let q = chain.pair_chain().matrix();
        let xi_m = DMatrix::from_diagonal(&DVector::from_vec(xi));
        let a = phi.transpose() * &xi_m * (q * m.gamma() - DMatrix::identity(np, np)) * &phi;
        let b = phi.transpose() * &xi_m * DVector::from_column_slice(m.rewards());
        kappa += (a * &theta_v + b) * *w;
    }
    Ok(kappa.norm())
}

/// Fixed point of a single environment of the instance.
pub fn solve_local(inst: &Instance, env: usize, opts: &SolverOptions) -> Result<FixedPointResult> {
    solve_global(&inst.local(env), opts)
}

/// Fixed point of the agent-averaged environment.
pub fn solve_chi_star(inst: &Instance, opts: &SolverOptions) -> Result<FixedPointResult> {
    let avg = averaged_env(inst)?;
    let single = Instance::new(&[avg], inst.features().clone(), inst.beta(), inst.ball())?;
    solve_global(&single, opts)
}

pub fn averaged_env(inst: &Instance) -> Result<Mdp> {
    if inst.envs().len() == 1 {
        return Ok(inst.envs()[0].clone());
    }
    let agents: Vec<Mdp> = inst
        .envs()
        .iter()
        .zip(inst.counts())
        .flat_map(|(m, c)| std::iter::repeat_n(m.clone(), *c))
        .collect();
    average_environment(&agents)
}

/// `theta_tilde^(c)` solving `A_bar^(c)(theta*) theta + b_bar^(c)(theta*) = 0`.
pub fn solve_theta_tilde(td_at_star: &TdPair) -> Result<ParamVec> {
    let w = td_at_star
        .a_mat
        .clone()
        .lu()
        .solve(&(-&td_at_star.b_vec))
        .filter(|w| w.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Assumption("A_bar at theta* is singular".into()))?;
    let out = ParamVec::from_dvector(&w);
    let residual = td_at_star.apply(&out).norm();
    let scale = 1.0 + td_at_star.a_mat.norm() * out.norm();
    if residual > 1e-12 * scale {
        return Err(Error::Assumption(format!("theta_tilde residual {residual:e} too large")));
    }
    Ok(out)
}

/// Deterministic FedSARSA: every agent takes `h` expected TD steps under
/// the frozen policy, the server averages and projects. With `h = 1` this
/// is `theta <- Pi(theta + eta kappa(theta))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicRun {
    pub theta: ParamVec,
    pub rounds: usize,
    /// Fixed-point residual after each round.
    pub residuals: Vec<f64>,
}

pub fn deterministic_fedsarsa(
    inst: &Instance,
    eta: f64,
    h: usize,
    rounds: usize,
    theta0: &ParamVec,
    stop_residual: Option<f64>,
) -> Result<DeterministicRun> {
    if !(eta > 0.0) || h == 0 {
        return Err(Error::Config("deterministic run needs eta > 0 and h >= 1".into()));
    }
    let ball = inst.ball();
    let mut theta = project(theta0, ball);
    let mut residuals = Vec::with_capacity(rounds.min(100_000));
    for t in 0..rounds {
        let tds = inst.td_at(&theta)?;
        let mut next = DVector::zeros(inst.dim());
        let start = theta.to_dvector();
        for (td, w) in tds.iter().zip(inst.weights()) {
            let mut local = start.clone();
            for _ in 0..h {
                local += (&td.a_mat * &local + &td.b_vec) * eta;
            }
            next += local * *w;
        }
        theta = ParamVec::from_dvector(&next);
        if !theta.is_finite() {
            return Err(Error::Numeric { round: t, step: 0 });
        }
        project_in_place(&mut theta.0, ball);
        let r = inst.residual(&theta)?;
        residuals.push(r);
        if stop_residual.is_some_and(|s| r <= s) {
            return Ok(DeterministicRun { theta, rounds: t + 1, residuals });
        }
    }
    Ok(DeterministicRun { theta, rounds, residuals })
}
