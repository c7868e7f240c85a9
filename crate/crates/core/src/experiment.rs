//! Experiment orchestration: configuration files, environment generation
//! and admission, the agent-count and local-step sweeps, the
//! heterogeneity grid, and instance reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::{
    admit, averaged_env, constants, drift_delta, heterogeneity_report, solve_chi_star, solve_global,
    theorem_rhs, Admission, BoundInputs, BoundMode, Instance, SolverOptions,
};
use crate::env::{garnet, perturb, Mdp, StartMode};
use crate::error::{Error, Result};
use crate::lfa::{FeatureKind, FeatureMap, ParamVec, ProjectionBall};
use crate::train::{
    env_hash, fmt_real, fmt_vec, run_fedsarsa, write_atomic, RunConfig, RunRecord, Targets,
};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment draws tried before generation gives up.
pub const MAX_ADMISSION_ATTEMPTS: u64 = 50;
const ENV_SEED_STRIDE: u64 = 1000;
const AUTO_LOG_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Generate,
    SingleRun,
    Speedup,
    LocalSteps,
    Table1,
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureChoice {
    #[default]
    OneHot,
    RandomUnit,
}

/// Flat experiment configuration. Every field except `schema_version` has
/// a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    /// Must match the subcommand when present.
    pub kind: Option<ExperimentKind>,
    pub n_states: usize,
    pub n_actions: usize,
    pub branching: usize,
    pub gamma: f64,
    pub n_envs: usize,
    pub env_seed: u64,
    /// Load environments from these JSON files instead of generating.
    pub env_files: Vec<PathBuf>,
    pub features: FeatureChoice,
    pub feature_dim: usize,
    pub feature_seed: u64,
    /// `None` picks `min(1, max_beta)` by admission.
    pub beta: Option<f64>,
    pub proj_radius: Option<f64>,
    /// `None` gives `1 / (10 H C_A)` with `H = local_steps`, shared by every
    /// run of the experiment.
    pub step_size: Option<f64>,
    pub burn_in: StartMode,
    pub n_agents: usize,
    pub local_steps: usize,
    pub n_agents_grid: Vec<usize>,
    pub local_steps_grid: Vec<usize>,
    pub eps_p_grid: Vec<f64>,
    pub eps_r_grid: Vec<f64>,
    /// Seed of the fresh Garnet the grid environments are pushed towards.
    /// `None` searches from 0 for one that reaches every cell.
    pub perturb_seed: Option<u64>,
    /// Total samples per agent; rounds are `samples_per_agent / H`.
    pub samples_per_agent: usize,
    /// Overrides `samples_per_agent / H` for single runs.
    pub rounds: Option<usize>,
    pub n_seeds: usize,
    pub seed_offset: u64,
    /// `None` logs about 2000 rounds per run.
    pub log_every: Option<usize>,
    pub record_wall_time: bool,
    pub waive_assumptions: bool,
    pub solver_tol: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: None,
            n_states: 5,
            n_actions: 3,
            branching: 2,
            gamma: 0.9,
            n_envs: 2,
            env_seed: 0,
            env_files: Vec::new(),
            features: FeatureChoice::OneHot,
            feature_dim: 8,
            feature_seed: 0,
            beta: None,
            proj_radius: None,
            step_size: None,
            burn_in: StartMode::Continuing,
            n_agents: 10,
            local_steps: 100,
            n_agents_grid: vec![2, 10, 50, 200],
            local_steps_grid: vec![1, 100, 10_000],
            eps_p_grid: vec![0.0, 0.1, 0.5, 1.0],
            eps_r_grid: vec![0.0, 0.1, 0.5, 1.0],
            perturb_seed: None,
            samples_per_agent: 4_000_000,
            rounds: None,
            n_seeds: 10,
            seed_offset: 0,
            log_every: None,
            record_wall_time: false,
            waive_assumptions: false,
            solver_tol: 1e-10,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: Value = serde_json::from_str(text)?;
        match raw.get("schema_version") {
            None => return Err(Error::Config("missing field `schema_version`".into())),
            Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
                return Err(Error::Config(format!("unsupported schema_version {v}, expected {SCHEMA_VERSION}")));
            }
            _ => {}
        }
        let spec: Self = serde_json::from_value(raw).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_states", self.n_states),
            ("n_actions", self.n_actions),
            ("branching", self.branching),
            ("n_envs", self.n_envs),
            ("n_agents", self.n_agents),
            ("local_steps", self.local_steps),
            ("samples_per_agent", self.samples_per_agent),
            ("n_seeds", self.n_seeds),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be at least 1")));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("`gamma` = {} must lie in (0, 1)", self.gamma)));
        }
        if self.n_agents_grid.contains(&0) || self.local_steps_grid.contains(&0) {
            return Err(Error::Config("grid entries must be at least 1".into()));
        }
        if !(self.solver_tol > 0.0) {
            return Err(Error::Config("`solver_tol` must be positive".into()));
        }
        if self.log_every == Some(0) || self.rounds == Some(0) {
            return Err(Error::Config("`log_every` and `rounds` must be at least 1".into()));
        }
        Ok(())
    }

    pub fn check_kind(&self, kind: ExperimentKind) -> Result<()> {
        match self.kind {
            Some(k) if k != kind => Err(Error::Config(format!("config is for {k:?}, subcommand is {kind:?}"))),
            _ => Ok(()),
        }
    }

    pub fn feature_kind(&self) -> FeatureKind {
        match self.features {
            FeatureChoice::OneHot => FeatureKind::OneHot,
            FeatureChoice::RandomUnit => FeatureKind::RandomUnit { dim: self.feature_dim, seed: self.feature_seed },
        }
    }

    fn solver(&self) -> SolverOptions {
        SolverOptions { tol: self.solver_tol, ..SolverOptions::default() }
    }

    fn feature_map(&self, mdp: &Mdp) -> Result<FeatureMap> {
        FeatureMap::build(self.feature_kind(), mdp.n_states(), mdp.n_actions())
    }

    fn ball(&self, features: &FeatureMap, gamma: f64) -> Result<ProjectionBall> {
        match self.proj_radius {
            Some(r) => ProjectionBall::new(r),
            None => Ok(ProjectionBall::default_for(features.dim(), gamma)),
        }
    }

    fn step_size(&self, gamma: f64) -> f64 {
        self.step_size.unwrap_or_else(|| RunConfig::default_step_size(self.local_steps, gamma))
    }
}

/// Environments together with the admitted sharpness and the two targets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub envs: Vec<Mdp>,
    pub instance: Instance,
    pub admission: Admission,
    pub theta_star: ParamVec,
    pub chi_star: ParamVec,
}

impl Prepared {
    pub fn beta(&self) -> f64 {
        self.admission.beta
    }
}

/// Loads or generates the environments and admits them. Generated draws
/// failing any assumption are replaced, up to [`MAX_ADMISSION_ATTEMPTS`].
pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    let opts = spec.solver();
    if !spec.env_files.is_empty() {
        let envs = spec
            .env_files
            .iter()
            .map(|p| Mdp::from_json(&std::fs::read_to_string(p)?))
            .collect::<Result<Vec<_>>>()?;
        return admit_envs(spec, envs, &opts, true);
    }
    let mut last_failure = String::new();
    for attempt in 0..MAX_ADMISSION_ATTEMPTS {
        let envs = (0..spec.n_envs as u64)
            .map(|c| {
                let seed = spec.env_seed.wrapping_add(ENV_SEED_STRIDE * (attempt * spec.n_envs as u64 + c));
                garnet(spec.n_states, spec.n_actions, spec.branching, spec.gamma, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        match admit_envs(spec, envs, &opts, false) {
            Ok(p) => return Ok(p),
            Err(Error::Assumption(msg)) => {
                log::info!("environment draw {attempt} rejected: {msg}");
                last_failure = msg;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Assumption(format!(
        "no admitted environments within {MAX_ADMISSION_ATTEMPTS} draws; last failure: {last_failure}"
    )))
}

fn admit_envs(spec: &ExperimentSpec, envs: Vec<Mdp>, opts: &SolverOptions, loaded: bool) -> Result<Prepared> {
    let features = spec.feature_map(&envs[0])?;
    let ball = spec.ball(&features, envs[0].gamma())?;
    let instance = Instance::new(&envs, features, spec.beta.unwrap_or(0.0), ball)?;
    let admission = admit(&instance, spec.beta, opts)?;
    if !admission.report.all_pass() {
        let msg = admission.report.failures().join("; ");
        if !(spec.waive_assumptions || loaded && msg.starts_with("sharpness_budget")) {
            return Err(Error::Assumption(msg));
        }
        log::warn!("proceeding despite failed assumptions: {msg}");
    }
    let instance = instance.with_beta(admission.beta);
    let theta_star = match &admission.report.theta_star {
        Some(s) => s.theta.clone(),
        None => solve_global(&instance, opts)?.theta,
    };
    let chi_star = solve_chi_star(&instance, opts)?.theta;
    log::info!("admitted instance with beta = {:e}", admission.beta);
    Ok(Prepared { envs, instance, admission, theta_star, chi_star })
}

/// Writes the admitted environments and their admission report.
pub fn generate(spec: &ExperimentSpec, out: &Path) -> Result<Prepared> {
    let p = prepare(spec)?;
    for (i, m) in p.envs.iter().enumerate() {
        write_atomic(&out.join(format!("env_{i}.json")), m.to_json()?.as_bytes())?;
    }
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "beta": p.admission.beta,
        "env_hashes": p.envs.iter().map(env_hash).collect::<Result<Vec<_>>>()?,
        "report": p.admission.report,
    });
    write_atomic(&out.join("admission.json"), serde_json::to_string_pretty(&doc)?.as_bytes())?;
    if spec.kind == Some(ExperimentKind::Table1) {
        table1_grid(spec, &p)?.write(&out.join("table1_envs"))?;
    }
    Ok(p)
}

fn run_config(spec: &ExperimentSpec, p: &Prepared, n_agents: usize, h: usize, rounds: usize, seed: u64) -> RunConfig {
    let mut c = RunConfig::new(n_agents, h, rounds, p.beta());
    c.step_size = Some(spec.step_size(p.envs[0].gamma()));
    c.proj_radius = Some(p.instance.ball().radius);
    c.burn_in = spec.burn_in;
    c.master_seed = seed;
    c.features = spec.feature_kind();
    c.log_every = spec.log_every.unwrap_or((rounds / AUTO_LOG_POINTS).max(1));
    c.record_wall_time = spec.record_wall_time;
    // admission already ran on these environments
    c.waive_assumptions = true;
    c
}

fn targets(p: &Prepared) -> Targets {
    Targets { theta_star: Some(p.theta_star.clone()), chi_star: Some(p.chi_star.clone()) }
}

/// One seeded run, written as a run-record CSV.
pub fn single_run(spec: &ExperimentSpec, out: &Path) -> Result<RunRecord> {
    let p = prepare(spec)?;
    let rounds = spec.rounds.unwrap_or((spec.samples_per_agent / spec.local_steps).max(1));
    let mut c = run_config(spec, &p, spec.n_agents, spec.local_steps, rounds, spec.seed_offset);
    c.log_every = spec.log_every.unwrap_or(1);
    let rec = run_fedsarsa(&c, &p.envs, &targets(&p))?;
    rec.write_csv(&out.join("run.csv"))?;
    Ok(rec)
}

/// Mean over rows whose round lies in the final 10% of the run.
pub fn plateau(rec: &RunRecord) -> f64 {
    let t = rec.config.rounds as f64;
    let tail: Vec<f64> = rec.rows.iter().filter(|r| r.round as f64 >= 0.9 * t).map(|r| r.mse_theta_star).collect();
    tail.iter().sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub n_agents: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub step_size: f64,
    pub plateau_mean: f64,
    pub plateau_std: f64,
    pub plateaus: Vec<f64>,
    pub final_mse_theta_star: f64,
    pub final_mse_chi_star: f64,
    pub config_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub beta: f64,
    pub env_hashes: Vec<String>,
    pub theta_star: Vec<f64>,
    pub chi_star: Vec<f64>,
    pub series: Vec<SeriesSummary>,
}

/// Every `(N, H)` pair of the two grids, all with the same step size and
/// the same samples per agent.
pub fn speedup(spec: &ExperimentSpec, out: &Path) -> Result<SweepSummary> {
    let p = prepare(spec)?;
    let cells: Vec<(usize, usize)> = spec
        .n_agents_grid
        .iter()
        .flat_map(|n| spec.local_steps_grid.iter().map(move |h| (*n, *h)))
        .collect();
    sweep(spec, &p, ExperimentKind::Speedup, &cells, &out.join("speedup"))
}

/// Plateau MSE for every local-step count at `N = n_agents`, with the same
/// step size and the same samples per agent throughout.
pub fn local_steps(spec: &ExperimentSpec, out: &Path) -> Result<SweepSummary> {
    let p = prepare(spec)?;
    let cells: Vec<(usize, usize)> = spec.local_steps_grid.iter().map(|h| (spec.n_agents, *h)).collect();
    sweep(spec, &p, ExperimentKind::LocalSteps, &cells, &out.join("local_steps"))
}

/// Runs every `(N, H)` cell for every seed on the prepared instance.
pub fn sweep(
    spec: &ExperimentSpec,
    p: &Prepared,
    kind: ExperimentKind,
    cells: &[(usize, usize)],
    dir: &Path,
) -> Result<SweepSummary> {
    let jobs: Vec<(usize, u64)> =
        (0..cells.len()).flat_map(|i| (0..spec.n_seeds as u64).map(move |s| (i, s))).collect();
    let tg = targets(p);
    let records = jobs
        .par_iter()
        .map(|&(i, s)| {
            let (n, h) = cells[i];
            let rounds = (spec.samples_per_agent / h).max(1);
            run_fedsarsa(&run_config(spec, p, n, h, rounds, spec.seed_offset + s), &p.envs, &tg)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut series = Vec::with_capacity(cells.len());
    for (i, &(n, h)) in cells.iter().enumerate() {
        let recs: Vec<&RunRecord> = records.iter().zip(&jobs).filter(|(_, j)| j.0 == i).map(|(r, _)| r).collect();
        let stem = format!("N{n}_H{h}");
        write_atomic(&dir.join(format!("{stem}.csv")), stacked_csv(&recs, spec.seed_offset)?.as_bytes())?;
        write_atomic(&dir.join(format!("{stem}_aggregate.csv")), aggregate_csv(&recs)?.as_bytes())?;
        let plateaus: Vec<f64> = recs.iter().map(|r| plateau(r)).collect();
        let (mean, std) = mean_std(&plateaus);
        series.push(SeriesSummary {
            n_agents: n,
            local_steps: h,
            rounds: recs[0].config.rounds,
            step_size: recs[0].config.step_size.unwrap_or_default(),
            plateau_mean: mean,
            plateau_std: std,
            plateaus,
            final_mse_theta_star: mean_std(&recs.iter().map(|r| r.last().mse_theta_star).collect::<Vec<_>>()).0,
            final_mse_chi_star: mean_std(&recs.iter().map(|r| r.last().mse_chi_star).collect::<Vec<_>>()).0,
            config_hashes: recs.iter().map(|r| r.config_hash.clone()).collect(),
        });
    }
    let summary = SweepSummary {
        schema_version: SCHEMA_VERSION,
        kind,
        beta: p.beta(),
        env_hashes: p.envs.iter().map(env_hash).collect::<Result<Vec<_>>>()?,
        theta_star: p.theta_star.0.clone(),
        chi_star: p.chi_star.0.clone(),
        series,
    };
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn stacked_csv(recs: &[&RunRecord], seed_offset: u64) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# fedsarsa sweep cell").ok();
    writeln!(out, "# schema_version: {SCHEMA_VERSION}").ok();
    writeln!(out, "# seed_offset: {seed_offset}").ok();
    for r in recs {
        writeln!(out, "# seed {}: config_hash {} config {}", r.config.master_seed, r.config_hash, serde_json::to_string(&r.config)?)
            .ok();
    }
    writeln!(out, "seed,round,samples_per_agent,mse_theta_star,mse_chi_star,theta_norm,wall_ms").ok();
    for r in recs {
        for row in &r.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.config.master_seed,
                row.round,
                row.samples_per_agent,
                fmt_real(row.mse_theta_star),
                fmt_real(row.mse_chi_star),
                fmt_real(row.theta_norm),
                row.wall_ms
            )
            .ok();
        }
    }
    Ok(out)
}

fn aggregate_csv(recs: &[&RunRecord]) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# fedsarsa sweep aggregate over {} seeds", recs.len()).ok();
    writeln!(out, "# schema_version: {SCHEMA_VERSION}").ok();
    let hashes: Vec<&str> = recs.iter().map(|r| r.config_hash.as_str()).collect();
    writeln!(out, "# config_hashes: {}", hashes.join(",")).ok();
    writeln!(out, "# env_hashes: {}", recs[0].env_hashes.join(",")).ok();
    writeln!(
        out,
        "round,samples_per_agent,mse_theta_star_mean,mse_theta_star_std,mse_chi_star_mean,mse_chi_star_std,n_seeds"
    )
    .ok();
    for (k, row) in recs[0].rows.iter().enumerate() {
        let theta: Vec<f64> = recs.iter().map(|r| r.rows[k].mse_theta_star).collect();
        let chi: Vec<f64> = recs.iter().map(|r| r.rows[k].mse_chi_star).collect();
        let samples = mean_std(&recs.iter().map(|r| r.rows[k].samples_per_agent).collect::<Vec<_>>()).0;
        let (tm, ts) = mean_std(&theta);
        let (cm, cs) = mean_std(&chi);
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.round,
            samples,
            fmt_real(tm),
            fmt_real(ts),
            fmt_real(cm),
            fmt_real(cs),
            recs.len()
        )
        .ok();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Cell {
    pub eps_p: f64,
    pub eps_r: f64,
    pub mse: f64,
    pub measured_eps_p: f64,
    pub measured_eps_r: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub beta: f64,
    pub perturb_seed: u64,
    pub base_hash: String,
    pub cells: Vec<Table1Cell>,
}

impl Table1 {
    pub fn cell(&self, eps_p: f64, eps_r: f64) -> Option<&Table1Cell> {
        self.cells.iter().find(|c| c.eps_p == eps_p && c.eps_r == eps_r)
    }
}

/// Finds the first perturbation seed that reaches the largest targets of
/// the grid.
pub fn find_perturb_seed(base: &Mdp, eps_p: f64, eps_r: f64, start: u64) -> Result<u64> {
    for seed in start..start + MAX_ADMISSION_ATTEMPTS {
        if perturb(base, eps_p, eps_r, seed).is_ok() {
            return Ok(seed);
        }
    }
    Err(Error::Unreachable { what: "heterogeneity grid", target: eps_p.max(eps_r), max_achievable: f64::NAN })
}

/// Base environment of the heterogeneity grid and its perturbations.
/// Unreachable cells carry the error message.
#[derive(Debug, Clone)]
pub struct Table1Grid {
    pub base: Mdp,
    pub perturb_seed: u64,
    pub cells: Vec<(f64, f64, std::result::Result<Mdp, String>)>,
}

impl Table1Grid {
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("base.json"), self.base.to_json()?.as_bytes())?;
        for (ep, er, env) in &self.cells {
            if let Ok(m) = env {
                write_atomic(&dir.join(format!("perturbed_p{ep}_r{er}.json")), m.to_json()?.as_bytes())?;
            }
        }
        Ok(())
    }
}

/// The first prepared environment with its rewards stretched to `[0, 1]`,
/// and one perturbation of it per `(eps_p, eps_r)` cell, all towards the
/// same fresh Garnet.
pub fn table1_grid(spec: &ExperimentSpec, p: &Prepared) -> Result<Table1Grid> {
    let base = p.envs[0].with_reward_span()?;
    let max_p = spec.eps_p_grid.iter().copied().fold(0.0, f64::max);
    let max_r = spec.eps_r_grid.iter().copied().fold(0.0, f64::max);
    let perturb_seed = match spec.perturb_seed {
        Some(s) => s,
        None => find_perturb_seed(&base, max_p, max_r, 0)?,
    };
    let cells = spec
        .eps_p_grid
        .iter()
        .flat_map(|ep| spec.eps_r_grid.iter().map(move |er| (*ep, *er)))
        .map(|(ep, er)| (ep, er, perturb(&base, ep, er, perturb_seed).map_err(|e| e.to_string())))
        .collect();
    Ok(Table1Grid { base, perturb_seed, cells })
}

/// Agent-averaged gap between local and federated fixed points over the
/// `(eps_p, eps_r)` grid. Two agents: the base environment and a
/// perturbation of it. Fixed points only, no sampling.
pub fn table1(spec: &ExperimentSpec, out: &Path) -> Result<Table1> {
    let p = prepare(spec)?;
    let (table, grid) = table1_compute(spec, &p)?;
    let dir = out.join("table1");
    grid.write(&dir.join("envs"))?;
    let mut csv = String::new();
    writeln!(csv, "# fedsarsa heterogeneity grid").ok();
    writeln!(csv, "# schema_version: {SCHEMA_VERSION}").ok();
    writeln!(csv, "# config_hash: {}", sha_of(spec)?).ok();
    writeln!(csv, "# beta: {}", fmt_real(table.beta)).ok();
    writeln!(csv, "# perturb_seed: {}", table.perturb_seed).ok();
    writeln!(csv, "# base_hash: {}", table.base_hash).ok();
    writeln!(csv, "eps_p,eps_r,mse,measured_eps_p,measured_eps_r,status").ok();
    for c in &table.cells {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            c.eps_p,
            c.eps_r,
            fmt_real(c.mse),
            fmt_real(c.measured_eps_p),
            fmt_real(c.measured_eps_r),
            c.status.replace(',', ";")
        )
        .ok();
    }
    write_atomic(&dir.join("table1.csv"), csv.as_bytes())?;
    Ok(table)
}

/// The grid values without touching the file system.
pub fn table1_compute(spec: &ExperimentSpec, p: &Prepared) -> Result<(Table1, Table1Grid)> {
    let grid = table1_grid(spec, p)?;
    let opts = spec.solver();
    let features = spec.feature_map(&grid.base)?;
    let ball = spec.ball(&features, grid.base.gamma())?;
    let beta = p.beta();
    let base = &grid.base;
    let cells: Vec<Table1Cell> = grid
        .cells
        .par_iter()
        .map(|(ep, er, env)| {
            let res = env
                .as_ref()
                .map_err(|e| Error::Config(e.clone()))
                .and_then(|other| table1_cell(base, other, &features, beta, ball, &opts));
            match res {
                Ok(cell) => Table1Cell { eps_p: *ep, eps_r: *er, ..cell },
                Err(e) => Table1Cell {
                    eps_p: *ep,
                    eps_r: *er,
                    mse: f64::NAN,
                    measured_eps_p: f64::NAN,
                    measured_eps_r: f64::NAN,
                    status: format!("{}: {e}", e.kind()),
                },
            }
        })
        .collect();
    let table = Table1 { beta, perturb_seed: grid.perturb_seed, base_hash: env_hash(base)?, cells };
    Ok((table, grid))
}

fn table1_cell(
    base: &Mdp,
    other: &Mdp,
    features: &FeatureMap,
    beta: f64,
    ball: ProjectionBall,
    opts: &SolverOptions,
) -> Result<Table1Cell> {
    let inst = Instance::new(&[base.clone(), other.clone()], features.clone(), beta, ball)?;
    let star = solve_global(&inst, opts)?;
    let mut mse = 0.0;
    if inst.envs().len() > 1 {
        for c in 0..inst.envs().len() {
            let local = solve_global(&inst.local(c), opts)?;
            mse += inst.weights()[c] * local.theta.dist_sq(&star.theta);
        }
    }
    Ok(Table1Cell {
        eps_p: 0.0,
        eps_r: 0.0,
        mse,
        measured_eps_p: crate::analysis::kernel_heterogeneity(inst.envs()),
        measured_eps_r: crate::analysis::reward_heterogeneity(inst.envs()),
        status: "ok".into(),
    })
}

fn sha_of(spec: &ExperimentSpec) -> Result<String> {
    Ok(crate::train::sha256_hex(serde_json::to_string(spec)?.as_bytes()))
}

/// Every computed quantity of the prepared instance as one JSON document.
pub fn report(spec: &ExperimentSpec) -> Result<Value> {
    let p = prepare(spec)?;
    let opts = spec.solver();
    let inst = &p.instance;
    let h = spec.local_steps;
    let eta = spec.step_size(inst.gamma());
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "beta": p.beta(),
        "env_hashes": p.envs.iter().map(env_hash).collect::<Result<Vec<_>>>()?,
        "envs": p.envs,
        "assumptions": p.admission.report,
        "all_assumptions_pass": p.admission.report.all_pass(),
        "theta_star": fmt_vec(p.theta_star.as_slice()),
        "chi_star": fmt_vec(p.chi_star.as_slice()),
        "theta_star_chi_star_gap": p.theta_star.dist_sq(&p.chi_star).sqrt(),
        "averaged_env_hash": env_hash(&averaged_env(inst)?)?,
        "step_size": eta,
        "local_steps": h,
    });
    let consts = match &p.admission.report.constants {
        Some(c) => c.clone(),
        None => constants(inst, &p.theta_star, &[])?,
    };
    let het = heterogeneity_report(inst, &p.theta_star, &consts, &opts)?;
    let tds = inst.td_at(&p.theta_star)?;
    let drift = drift_delta(
        &tds,
        inst.weights(),
        &het.theta_tildes,
        &p.theta_star,
        eta,
        h,
        (het.zeta_a, het.zeta_theta),
        consts.c_a,
        consts.c_proj_tilde,
    )?;
    let theta0_dist = p.theta_star.norm().powi(2);
    let bound = |mode, n| {
        let x = BoundInputs {
            eta,
            h,
            n_agents: n,
            rounds: 0,
            init_dist_sq: theta0_dist,
            stationary_start: spec.burn_in == StartMode::StationarySkip,
            zeta_a: het.zeta_a,
            zeta_theta: het.zeta_theta,
        };
        let c = theorem_rhs(&consts, &x, mode);
        json!({"limit": c.limit, "contraction": c.contraction, "heterogeneity": c.heterogeneity_term,
               "variance": c.variance_term, "burn_in": c.burn_in_term, "step": c.step_term})
    };
    let obj = doc.as_object_mut().expect("object literal");
    obj.insert("constants".into(), serde_json::to_value(&consts)?);
    obj.insert("heterogeneity".into(), serde_json::to_value(&het)?);
    obj.insert("drift".into(), serde_json::to_value(&drift)?);
    obj.insert("bound_single".into(), bound(BoundMode::Single, 1));
    obj.insert("bound_federated".into(), bound(BoundMode::Federated, spec.n_agents));
    obj.insert("config_hash".into(), Value::String(sha_of(spec)?));
    Ok(doc)
}
