use serde::{Deserialize, Serialize};

use crate::env::StartMode;
use crate::error::{Error, Result};
use crate::lfa::FeatureKind;

/// Per-round step-size rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// `eta_t = eta * offset / (offset + t)`.
    Harmonic { offset: f64 },
}

impl StepSchedule {
    pub fn at(&self, eta: f64, round: usize) -> f64 {
        match *self {
            StepSchedule::Constant => eta,
            StepSchedule::Harmonic { offset } => eta * offset / (offset + round as f64),
        }
    }
}

/// Everything that determines a training run, given the environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_agents: usize,
    pub local_steps: usize,
    pub rounds: usize,
    /// Defaults to `1 / (10 H C_A)`.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default)]
    pub step_schedule: StepSchedule,
    pub beta: f64,
    /// Defaults to `sqrt(d) / (1 - gamma)`.
    #[serde(default)]
    pub proj_radius: Option<f64>,
    #[serde(default)]
    pub burn_in: StartMode,
    #[serde(default)]
    pub master_seed: u64,
    /// Environment index of every agent. Defaults to contiguous equal
    /// blocks: the first half of the agents on environment 0 and so on.
    #[serde(default)]
    pub env_assignment: Option<Vec<usize>>,
    #[serde(default)]
    pub features: FeatureKind,
    /// Defaults to the zero vector.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Record every `log_every`-th round (plus the last).
    #[serde(default = "one")]
    pub log_every: usize,
    /// Fill the `wall_ms` column. Off by default so outputs are
    /// byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
    /// Skip assumption checks before training.
    #[serde(default)]
    pub waive_assumptions: bool,
    /// Mixing time used for the geometric skip. Defaults to the largest
    /// mixing time over environments at `theta0`.
    #[serde(default)]
    pub skip_tau: Option<usize>,
}

fn one() -> usize {
    1
}

impl RunConfig {
    pub fn new(n_agents: usize, local_steps: usize, rounds: usize, beta: f64) -> Self {
        Self {
            n_agents,
            local_steps,
            rounds,
            step_size: None,
            step_schedule: StepSchedule::Constant,
            beta,
            proj_radius: None,
            burn_in: StartMode::Continuing,
            master_seed: 0,
            env_assignment: None,
            features: FeatureKind::OneHot,
            theta0: None,
            log_every: 1,
            record_wall_time: false,
            waive_assumptions: false,
            skip_tau: None,
        }
    }

    pub fn validate(&self, n_envs: usize) -> Result<()> {
        if self.n_agents == 0 || self.local_steps == 0 || self.rounds == 0 {
            return Err(Error::Config("n_agents, local_steps and rounds must be at least 1".into()));
        }
        if let Some(eta) = self.step_size {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::Config(format!("step_size {eta} must be positive")));
            }
        }
        if let StepSchedule::Harmonic { offset } = self.step_schedule {
            if !(offset > 0.0) {
                return Err(Error::Config("harmonic schedule offset must be positive".into()));
            }
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta {} must be finite and nonnegative", self.beta)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if n_envs == 0 {
            return Err(Error::Config("at least one environment is required".into()));
        }
        if let Some(assign) = &self.env_assignment {
            if assign.len() != self.n_agents {
                return Err(Error::Config(format!(
                    "env_assignment has {} entries for {} agents",
                    assign.len(),
                    self.n_agents
                )));
            }
            if let Some(bad) = assign.iter().find(|e| **e >= n_envs) {
                return Err(Error::Config(format!("env_assignment refers to environment {bad} of {n_envs}")));
            }
        }
        Ok(())
    }

    /// Environment index for each agent.
    pub fn assignment(&self, n_envs: usize) -> Vec<usize> {
        match &self.env_assignment {
            Some(a) => a.clone(),
            None => (0..self.n_agents).map(|c| c * n_envs / self.n_agents).collect(),
        }
    }

    pub fn default_step_size(local_steps: usize, gamma: f64) -> f64 {
        1.0 / (10.0 * local_steps as f64 * (1.0 + gamma))
    }
}
