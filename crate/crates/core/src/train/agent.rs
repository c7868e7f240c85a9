use crate::env::{geometric_skip, sample_step, Mdp};
use crate::error::{Error, Result};
use crate::lfa::{td_update, FeatureMap};
use crate::policy::Policy;
use crate::rng::{Purpose, RngStream};

/// One agent's local parameter, carried chain state and random streams.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    pub theta: Vec<f64>,
    pub state: usize,
    trajectory: RngStream,
    skip: RngStream,
    /// Transitions discarded by the geometric skip so far.
    pub skipped: u64,
}

impl AgentState {
    /// Initial state drawn uniformly from the agent's own stream.
    pub fn new(id: usize, master_seed: u64, n_states: usize, dim: usize) -> Self {
        let mut init = RngStream::new(master_seed, Purpose::InitialState, id as u64);
        let state = ((init.uniform() * n_states as f64) as usize).min(n_states - 1);
        Self {
            id,
            theta: vec![0.0; dim],
            state,
            trajectory: RngStream::new(master_seed, Purpose::Trajectory, id as u64),
            skip: RngStream::new(master_seed, Purpose::Skip, id as u64),
            skipped: 0,
        }
    }

    /// Uniforms drawn from the trajectory stream so far.
    pub fn trajectory_draws(&self) -> u64 {
        self.trajectory.draws()
    }
}

/// `H` TD steps along one continuous trajectory under the frozen policy,
/// starting from the broadcast parameter.
///
/// With `skip_tau` set, a `Geometric(1 / (2 tau))` number of transitions is
/// discarded first. The round's first action is then drawn at the carried
/// state.
#[allow(clippy::too_many_arguments)]
pub fn local_round(
    agent: &mut AgentState,
    broadcast: &[f64],
    mdp: &Mdp,
    policy: &Policy,
    features: &FeatureMap,
    h: usize,
    eta: f64,
    skip_tau: Option<usize>,
    round: usize,
) -> Result<()> {
    agent.theta.copy_from_slice(broadcast);
    let rng = &mut agent.trajectory;
    let mut s = agent.state;
    if let Some(tau) = skip_tau {
        let k = geometric_skip(&mut agent.skip, tau);
        for _ in 0..k {
            let a = policy.sample(s, rng.uniform());
            s = mdp.sample_next(s, a, rng.uniform());
        }
        agent.skipped += k;
    }
    let mut a = policy.sample(s, rng.uniform());
    let gamma = mdp.gamma();
    for step in 0..h {
        let t = sample_step(mdp, policy, s, a, rng);
        td_update(&mut agent.theta, &t, eta, features, gamma).map_err(|_| Error::Numeric { round, step })?;
        s = t.next_state;
        a = t.next_action;
    }
    if agent.theta.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric { round, step: h });
    }
    agent.state = s;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lfa::features_one_hot;

    fn toy() -> (Mdp, Policy, FeatureMap) {
        (Mdp::new(1, 1, 0.9, vec![1.0], vec![1.0]).unwrap(), Policy::uniform(1, 1), features_one_hot(1, 1))
    }

    #[test]
    fn zero_step_keeps_broadcast() {
        let (m, p, f) = toy();
        let mut ag = AgentState::new(0, 1, 1, 1);
        local_round(&mut ag, &[3.0], &m, &p, &f, 1, 0.0, None, 0).unwrap();
        assert_eq!(ag.theta, vec![3.0]);
    }

    #[test]
    fn two_step_recursion() {
        let (m, p, f) = toy();
        let mut ag = AgentState::new(0, 1, 1, 1);
        local_round(&mut ag, &[0.0], &m, &p, &f, 2, 0.1, None, 0).unwrap();
        assert!((ag.theta[0] - 0.199).abs() < 1e-15);
    }

    #[test]
    fn draw_accounting() {
        let m = crate::env::garnet(5, 3, 2, 0.9, 1).unwrap();
        let p = Policy::uniform(5, 3);
        let f = features_one_hot(5, 3);
        let mut ag = AgentState::new(2, 9, 5, 15);
        local_round(&mut ag, &[0.0; 15], &m, &p, &f, 7, 0.01, None, 0).unwrap();
        assert_eq!(ag.trajectory_draws(), 15);
        local_round(&mut ag, &[0.0; 15], &m, &p, &f, 7, 0.01, None, 1).unwrap();
        assert_eq!(ag.trajectory_draws(), 30);
    }

    #[test]
    fn blow_up_is_reported() {
        let (m, p, f) = toy();
        let mut ag = AgentState::new(0, 1, 1, 1);
        let err = local_round(&mut ag, &[f64::MAX], &m, &p, &f, 3, 1e300, None, 4).unwrap_err();
        assert!(matches!(err, Error::Numeric { round: 4, .. }));
    }
}
