use nalgebra::{DMatrix, DVector};

use crate::env::{induced_chain, Mdp};
use crate::error::{Error, Result};
use crate::lfa::{expected_td, FeatureMap, ParamVec, ProjectionBall, TdPair};
use crate::policy::softmax_improve;

/// A federation seen from the analysis side: the distinct environments,
/// the fraction of agents on each, and the shared features, sharpness and
/// projection ball.
#[derive(Debug, Clone)]
pub struct Instance {
    envs: Vec<Mdp>,
    weights: Vec<f64>,
    counts: Vec<usize>,
    features: FeatureMap,
    beta: f64,
    ball: ProjectionBall,
}

impl Instance {
    /// One entry per agent. Identical environments are merged and weighted
    /// by their multiplicity.
    pub fn new(agents: &[Mdp], features: FeatureMap, beta: f64, ball: ProjectionBall) -> Result<Self> {
        let Some(first) = agents.first() else {
            return Err(Error::Config("an instance needs at least one environment".into()));
        };
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("sharpness {beta} must be finite and nonnegative")));
        }
        if features.n_states() != first.n_states() || features.n_actions() != first.n_actions() {
            return Err(Error::Dimension("features do not match the environments".into()));
        }
        let mut envs: Vec<Mdp> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for m in agents {
            if !m.same_shape(first) {
                return Err(Error::Dimension("environments differ in shape or discount".into()));
            }
            match envs.iter().position(|e| e == m) {
                Some(i) => counts[i] += 1,
                None => {
                    envs.push(m.clone());
                    counts.push(1);
                }
            }
        }
        let n = agents.len() as f64;
        let weights = counts.iter().map(|c| *c as f64 / n).collect();
        Ok(Self { envs, weights, counts, features, beta, ball })
    }

    pub fn envs(&self) -> &[Mdp] {
        &self.envs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn n_agents(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ball(&self) -> ProjectionBall {
        self.ball
    }

    pub fn gamma(&self) -> f64 {
        self.envs[0].gamma()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    /// Single-environment instance on the `i`-th distinct environment.
    pub fn local(&self, i: usize) -> Self {
        Self {
            envs: vec![self.envs[i].clone()],
            weights: vec![1.0],
            counts: vec![1],
            ..self.clone()
        }
    }

    /// `(A_bar^(c)(theta), b_bar^(c)(theta))` for every distinct environment.
    pub fn td_at(&self, theta: &ParamVec) -> Result<Vec<TdPair>> {
        let policy = softmax_improve(theta, &self.features, self.beta)?;
        self.envs
            .iter()
            .map(|m| {
                let st = induced_chain(m, &policy)?.stationary()?;
                expected_td(m, &policy, &self.features, &st)
            })
            .collect()
    }

    /// Agent-averaged expectations.
    pub fn mean_td(&self, theta: &ParamVec) -> Result<TdPair> {
        Ok(self.average(&self.td_at(theta)?))
    }

    pub fn average(&self, pairs: &[TdPair]) -> TdPair {
        let d = self.dim();
        let mut out = TdPair { a_mat: DMatrix::zeros(d, d), b_vec: DVector::zeros(d) };
        for (p, w) in pairs.iter().zip(&self.weights) {
            out.a_mat += &p.a_mat * *w;
            out.b_vec += &p.b_vec * *w;
        }
        out
    }

    /// `|| A_bar(theta) theta + b_bar(theta) ||`.
    pub fn residual(&self, theta: &ParamVec) -> Result<f64> {
        Ok(self.mean_td(theta)?.apply(theta).norm())
    }
}
