use serde::{Deserialize, Serialize};

use crate::env::Mdp;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::RngStream;

/// One observed `(s, a, r(s, a), s', a')` tuple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_action: usize,
}

/// How a round's trajectory starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    /// Carry the chain state over from the previous round.
    #[default]
    Continuing,
    /// Discard a geometric number of transitions before recording.
    StationarySkip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Transition>,
    pub start_mode: StartMode,
}

impl Trajectory {
    /// Consecutive steps chain together and every move has positive
    /// kernel probability.
    pub fn validate(&self, mdp: &Mdp) -> Result<()> {
        for (k, t) in self.steps.iter().enumerate() {
            if mdp.prob(t.state, t.action, t.next_state) <= 0.0 {
                return Err(Error::Consistency(format!("step {k} uses a zero-probability move")));
            }
            if let Some(next) = self.steps.get(k + 1) {
                if next.state != t.next_state || next.action != t.next_action {
                    return Err(Error::Consistency(format!("steps {k} and {} do not chain", k + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Draws `s' ~ P(.|s, a)` then `a' ~ pi(.|s')`. Always consumes exactly
/// two uniforms from `rng`, in that order.
#[inline]
pub fn sample_step(
    mdp: &Mdp,
    policy: &Policy,
    state: usize,
    action: usize,
    rng: &mut RngStream,
) -> Transition {
    let next_state = mdp.sample_next(state, action, rng.uniform());
    let next_action = policy.sample(next_state, rng.uniform());
    Transition {
        state,
        action,
        reward: mdp.reward(state, action),
        next_state,
        next_action,
    }
}

/// Burn-in length `K ~ Geometric(1 / (2 tau_mix))` on `{0, 1, 2, ...}`,
/// by inversion of a single uniform.
pub fn geometric_skip(rng: &mut RngStream, tau_mix: usize) -> u64 {
    let p = 1.0 / (2.0 * tau_mix.max(1) as f64);
    let u = 1.0 - rng.uniform();
    (u.ln() / (1.0 - p).ln()).floor() as u64
}

/// Roll the chain forward `n_steps` from `(state, first action drawn from
/// the policy)`.
pub fn rollout(
    mdp: &Mdp,
    policy: &Policy,
    state: usize,
    n_steps: usize,
    rng: &mut RngStream,
) -> Trajectory {
    let mut steps = Vec::with_capacity(n_steps);
    let mut s = state;
    let mut a = policy.sample(s, rng.uniform());
    for _ in 0..n_steps {
        let t = sample_step(mdp, policy, s, a, rng);
        s = t.next_state;
        a = t.next_action;
        steps.push(t);
    }
    Trajectory { steps, start_mode: StartMode::Continuing }
}
