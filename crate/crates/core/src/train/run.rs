use std::time::Instant;

use rayon::prelude::*;

use crate::analysis::{check_assumptions, Instance, SolverOptions};
use crate::env::{induced_chain, Mdp, StartMode};
use crate::error::{Error, Result};
use crate::lfa::{project_in_place, FeatureMap, ParamVec, ProjectionBall};
use crate::policy::{softmax_improve, Policy};
use crate::train::agent::{local_round, AgentState};
use crate::train::record::{config_hash, env_hash, RoundRow, RunRecord};
use crate::train::RunConfig;

/// Rounds with fewer total local steps than this run on the calling thread.
const PARALLEL_WORK: usize = 1 << 14;

/// Parameters the error columns are measured against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Targets {
    pub theta_star: Option<ParamVec>,
    pub chi_star: Option<ParamVec>,
}

/// Shared, read-only inputs of every round.
pub struct RoundContext<'a> {
    pub envs: &'a [Mdp],
    pub assignment: &'a [usize],
    pub features: &'a FeatureMap,
    pub local_steps: usize,
    pub skip_tau: Option<usize>,
}

/// Broadcast, local rounds, fixed-order pairwise mean, projection.
/// Returns the projected aggregate; the caller improves the policy.
pub fn fed_round(
    theta: &[f64],
    agents: &mut [AgentState],
    policy: &Policy,
    ctx: &RoundContext<'_>,
    eta: f64,
    ball: ProjectionBall,
    round: usize,
) -> Result<Vec<f64>> {
    let work = |ag: &mut AgentState| {
        let mdp = &ctx.envs[ctx.assignment[ag.id]];
        local_round(ag, theta, mdp, policy, ctx.features, ctx.local_steps, eta, ctx.skip_tau, round)
    };
    let results: Vec<Result<()>> = if agents.len() > 1 && agents.len() * ctx.local_steps >= PARALLEL_WORK {
        agents.par_iter_mut().map(work).collect()
    } else {
        agents.iter_mut().map(work).collect()
    };
    results.into_iter().collect::<Result<()>>()?;
    let mut mean = pairwise_sum(agents);
    let n = agents.len() as f64;
    mean.iter_mut().for_each(|x| *x /= n);
    project_in_place(&mut mean, ball);
    Ok(mean)
}

fn pairwise_sum(agents: &[AgentState]) -> Vec<f64> {
    if agents.len() == 1 {
        return agents[0].theta.clone();
    }
    let (left, right) = agents.split_at(agents.len() / 2);
    let mut sum = pairwise_sum(left);
    for (s, r) in sum.iter_mut().zip(pairwise_sum(right)) {
        *s += r;
    }
    sum
}

/// Fills in every defaulted field of the configuration.
pub fn resolve_config(config: &RunConfig, envs: &[Mdp]) -> Result<RunConfig> {
    config.validate(envs.len())?;
    let first = &envs[0];
    if envs.iter().any(|m| !m.same_shape(first)) {
        return Err(Error::Dimension("environments differ in shape or discount".into()));
    }
    let features = FeatureMap::build(config.features, first.n_states(), first.n_actions())?;
    let d = features.dim();
    let mut out = config.clone();
    out.step_size = Some(config.step_size.unwrap_or_else(|| RunConfig::default_step_size(config.local_steps, first.gamma())));
    out.proj_radius = Some(match config.proj_radius {
        Some(r) => ProjectionBall::new(r)?.radius,
        None => ProjectionBall::default_for(d, first.gamma()).radius,
    });
    let theta0 = config.theta0.clone().unwrap_or_else(|| vec![0.0; d]);
    if theta0.len() != d {
        return Err(Error::Dimension(format!("theta0 has {} entries, features have dimension {d}", theta0.len())));
    }
    out.theta0 = Some(theta0);
    out.env_assignment = Some(config.assignment(envs.len()));
    if config.burn_in == StartMode::StationarySkip && config.skip_tau.is_none() {
        let policy = softmax_improve(&ParamVec(out.theta0.clone().unwrap_or_default()), &features, config.beta)?;
        let mut tau = 1;
        for m in envs {
            tau = tau.max(induced_chain(m, &policy)?.mixing_time(None)?.tau_mix);
        }
        out.skip_tau = Some(tau);
    }
    if config.burn_in == StartMode::Continuing {
        out.skip_tau = None;
    }
    Ok(out)
}

/// Resolved inputs shared by the federated and single-agent loops.
struct Setup {
    cfg: RunConfig,
    features: FeatureMap,
    eta: f64,
    ball: ProjectionBall,
    assignment: Vec<usize>,
    env_hashes: Vec<String>,
    hash: String,
}

fn setup(config: &RunConfig, envs: &[Mdp], targets: &Targets) -> Result<Setup> {
    let cfg = resolve_config(config, envs)?;
    let first = &envs[0];
    let features = FeatureMap::build(cfg.features, first.n_states(), first.n_actions())?;
    let d = features.dim();
    let eta = cfg.step_size.unwrap_or_default();
    let ball = ProjectionBall::new(cfg.proj_radius.unwrap_or_default())?;
    let assignment = cfg.env_assignment.clone().unwrap_or_default();
    for t in [&targets.theta_star, &targets.chi_star].into_iter().flatten() {
        if t.dim() != d {
            return Err(Error::Dimension(format!("target has dimension {}, expected {d}", t.dim())));
        }
    }
    let guard = eta * cfg.local_steps as f64 * (1.0 + first.gamma());
    if guard > 0.2 {
        log::warn!("eta H C_A = {guard:.4} exceeds 1/5");
    }
    if !cfg.waive_assumptions {
        enforce_assumptions(&cfg, envs, &assignment, &features, ball)?;
    }
    let env_hashes = envs.iter().map(env_hash).collect::<Result<Vec<_>>>()?;
    let hash = config_hash(&cfg, &env_hashes)?;
    Ok(Setup { cfg, features, eta, ball, assignment, env_hashes, hash })
}

/// Logged rows and policy fingerprints of a run in progress.
struct Log<'a> {
    cfg: &'a RunConfig,
    targets: &'a Targets,
    start: Option<Instant>,
    rows: Vec<RoundRow>,
    fingerprints: Vec<u64>,
}

impl<'a> Log<'a> {
    fn new(cfg: &'a RunConfig, targets: &'a Targets) -> Self {
        let start = cfg.record_wall_time.then(Instant::now);
        Self { cfg, targets, start, rows: Vec::new(), fingerprints: Vec::new() }
    }

    fn push(&mut self, round: usize, theta: &[f64], agents: &[AgentState], policy: &Policy) {
        if round != 0 && !round.is_multiple_of(self.cfg.log_every) && round != self.cfg.rounds {
            return;
        }
        let skipped: u64 = agents.iter().map(|a| a.skipped).sum();
        let dist = |t: &Option<ParamVec>| {
            t.as_ref().map_or(f64::NAN, |t| theta.iter().zip(t.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum())
        };
        self.rows.push(RoundRow {
            round,
            samples_per_agent: (round * self.cfg.local_steps) as f64 + skipped as f64 / agents.len() as f64,
            mse_theta_star: dist(&self.targets.theta_star),
            mse_chi_star: dist(&self.targets.chi_star),
            theta_norm: theta.iter().map(|x| x * x).sum::<f64>().sqrt(),
            wall_ms: self.start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3),
        });
        self.fingerprints.push(policy.fingerprint());
    }

    fn finish(self, setup: Setup, theta: Vec<f64>) -> RunRecord {
        RunRecord {
            config: setup.cfg,
            config_hash: setup.hash,
            env_hashes: setup.env_hashes,
            theta_star: self.targets.theta_star.clone(),
            chi_star: self.targets.chi_star.clone(),
            rows: self.rows,
            final_theta: ParamVec(theta),
            policy_fingerprints: self.fingerprints,
        }
    }
}

fn initial(setup: &Setup) -> Result<(Vec<f64>, Policy)> {
    let mut theta = setup.cfg.theta0.clone().unwrap_or_default();
    project_in_place(&mut theta, setup.ball);
    let policy = softmax_improve(&ParamVec(theta.clone()), &setup.features, setup.cfg.beta)?;
    Ok((theta, policy))
}

/// Federated SARSA. `envs` are the distinct environments; the
/// configuration's assignment maps agents onto them.
pub fn run_fedsarsa(config: &RunConfig, envs: &[Mdp], targets: &Targets) -> Result<RunRecord> {
    let su = setup(config, envs, targets)?;
    let cfg = su.cfg.clone();
    let ctx = RoundContext {
        envs,
        assignment: &su.assignment,
        features: &su.features,
        local_steps: cfg.local_steps,
        skip_tau: cfg.skip_tau,
    };
    let mut agents: Vec<AgentState> = (0..cfg.n_agents)
        .map(|c| AgentState::new(c, cfg.master_seed, envs[0].n_states(), su.features.dim()))
        .collect();
    let (mut theta, mut policy) = initial(&su)?;
    let mut log = Log::new(&cfg, targets);
    log.push(0, &theta, &agents, &policy);
    for t in 0..cfg.rounds {
        let eta_t = cfg.step_schedule.at(su.eta, t);
        theta = fed_round(&theta, &mut agents, &policy, &ctx, eta_t, su.ball, t)?;
        policy = softmax_improve(&ParamVec(theta.clone()), &su.features, cfg.beta)?;
        log.push(t + 1, &theta, &agents, &policy);
    }
    Ok(log.finish(su, theta))
}

/// Single-agent SARSA: `H` TD steps along one trajectory, projection,
/// policy improvement.
pub fn run_sarsa(config: &RunConfig, env: &Mdp, targets: &Targets) -> Result<RunRecord> {
    if config.n_agents != 1 {
        return Err(Error::Config(format!("single-agent SARSA needs n_agents = 1, got {}", config.n_agents)));
    }
    let su = setup(config, std::slice::from_ref(env), targets)?;
    let cfg = su.cfg.clone();
    let mut agent = AgentState::new(0, cfg.master_seed, env.n_states(), su.features.dim());
    let (mut theta, mut policy) = initial(&su)?;
    let mut log = Log::new(&cfg, targets);
    log.push(0, &theta, std::slice::from_ref(&agent), &policy);
    for t in 0..cfg.rounds {
        let eta_t = cfg.step_schedule.at(su.eta, t);
        local_round(&mut agent, &theta, env, &policy, &su.features, cfg.local_steps, eta_t, cfg.skip_tau, t)?;
        theta.copy_from_slice(&agent.theta);
        project_in_place(&mut theta, su.ball);
        policy = softmax_improve(&ParamVec(theta.clone()), &su.features, cfg.beta)?;
        log.push(t + 1, &theta, std::slice::from_ref(&agent), &policy);
    }
    Ok(log.finish(su, theta))
}

fn enforce_assumptions(
    cfg: &RunConfig,
    envs: &[Mdp],
    assignment: &[usize],
    features: &FeatureMap,
    ball: ProjectionBall,
) -> Result<()> {
    let agents: Vec<Mdp> = assignment.iter().map(|e| envs[*e].clone()).collect();
    let inst = Instance::new(&agents, features.clone(), cfg.beta, ball)?;
    let report = check_assumptions(&inst, &SolverOptions::default());
    let hard: Vec<String> = report
        .failures()
        .into_iter()
        .filter(|f| !f.starts_with("sharpness_budget"))
        .collect();
    if !hard.is_empty() {
        return Err(Error::Assumption(hard.join("; ")));
    }
    if !report.sharpness_budget.pass {
        log::warn!("sharpness budget violated: {}", report.sharpness_budget.detail);
    }
    Ok(())
}
