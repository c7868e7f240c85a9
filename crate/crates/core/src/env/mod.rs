//! Finite MDPs, the chains they induce, and trajectory sampling.

mod chain;
mod garnet;
mod mdp;
mod sampling;

pub use chain::{
    dobrushin, induced_chain, tv_distance, ChainKey, MarkovChain, MixingReport, StateActionChain,
    Stationary, StationaryDist,
};
pub use garnet::{garnet, perturb, MAX_GARNET_ATTEMPTS};
pub use mdp::{average_environment, Mdp, MdpDocument, ROW_SUM_TOL};
pub use sampling::{geometric_skip, rollout, sample_step, StartMode, Trajectory, Transition};

pub(crate) use garnet::{max_reward_gap, max_row_tv};
