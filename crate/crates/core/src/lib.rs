//! Federated SARSA with linear function approximation over finite MDPs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod env;
pub mod error;
pub mod experiment;
pub mod lfa;
pub mod policy;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
