//! Softmax policy improvement and its Lipschitz diagnostics.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lfa::{FeatureMap, ParamVec};
use crate::rng::{sample_cumulative, RngStream};

const ROW_TOL: f64 = 1e-12;

/// Row-stochastic matrix `pi[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    sharpness: Option<f64>,
    cumulative: Vec<f64>,
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let probs = vec![1.0 / n_actions as f64; n_states * n_actions];
        Self::assemble(n_states, n_actions, probs, None)
    }

    /// Externally supplied policy, row-major.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || probs.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "policy needs {n_states}x{n_actions} entries, got {}",
                probs.len()
            )));
        }
        for (s, row) in probs.chunks_exact(n_actions).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::NotADistribution(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Self::assemble(n_states, n_actions, probs, None))
    }

    fn assemble(n_states: usize, n_actions: usize, probs: Vec<f64>, sharpness: Option<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(probs.len());
        for row in probs.chunks_exact(n_actions) {
            let mut acc = 0.0;
            for p in row {
                acc += p;
                cumulative.push(acc);
            }
        }
        Self { n_states, n_actions, probs, sharpness, cumulative }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn sharpness(&self) -> Option<f64> {
        self.sharpness
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Action drawn by inverting the row CDF at `u`.
    #[inline]
    pub fn sample(&self, s: usize, u: f64) -> usize {
        let start = s * self.n_actions;
        sample_cumulative(&self.cumulative[start..start + self.n_actions], u)
    }

    /// Hash of the exact probability bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.n_states.hash(&mut h);
        self.n_actions.hash(&mut h);
        for p in &self.probs {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// `pi_theta(a|s)` proportional to `exp(beta phi(s,a)^T theta)`.
pub fn softmax_improve(theta: &ParamVec, features: &FeatureMap, beta: f64) -> Result<Policy> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::Config(format!("sharpness {beta} must be finite and nonnegative")));
    }
    if !theta.is_finite() {
        return Err(Error::Numeric { round: 0, step: 0 });
    }
    if theta.dim() != features.dim() {
        return Err(Error::Dimension(format!(
            "theta has dimension {}, features {}",
            theta.dim(),
            features.dim()
        )));
    }
    let (ns, na) = (features.n_states(), features.n_actions());
    let mut probs = Vec::with_capacity(ns * na);
    let mut logits = vec![0.0; na];
    for s in 0..ns {
        for (a, l) in logits.iter_mut().enumerate() {
            *l = beta * features.value(theta.as_slice(), s, a);
        }
        softmax_row(&logits, &mut probs);
    }
    Ok(Policy::assemble(ns, na, probs, Some(beta)))
}

fn softmax_row(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for l in logits {
        let e = (l - max).exp();
        sum += e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|p| *p /= sum);
}

/// `grad_theta pi_theta(a|s) = beta pi(a|s) (phi(s,a) - sum_b pi(b|s) phi(s,b))`.
pub fn softmax_gradient(policy: &Policy, features: &FeatureMap, beta: f64, s: usize, a: usize) -> Vec<f64> {
    let d = features.dim();
    let mut mean = vec![0.0; d];
    for b in 0..features.n_actions() {
        let p = policy.prob(s, b);
        for (m, f) in mean.iter_mut().zip(features.phi(s, b)) {
            *m += p * f;
        }
    }
    let scale = beta * policy.prob(s, a);
    features.phi(s, a).iter().zip(&mean).map(|(f, m)| scale * (f - m)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    pub beta: f64,
    pub samples: usize,
    /// `(state, action)` of the first sample whose ratio exceeded `beta`.
    pub violating_pair: Option<(usize, usize)>,
}

impl LipschitzReport {
    pub fn holds(&self) -> bool {
        self.violating_pair.is_none()
    }
}

/// Largest `|pi_1(a|s) - pi_2(a|s)| / ||theta_1 - theta_2||` over
/// `n_pairs` random draws. Parameter scales range over several orders of
/// magnitude, and half the pairs are close together to probe the gradient.
pub fn lipschitz_check(features: &FeatureMap, beta: f64, n_pairs: usize, rng: &mut RngStream) -> Result<LipschitzReport> {
    if n_pairs == 0 {
        return Err(Error::Config("lipschitz_check needs at least one pair".into()));
    }
    let d = features.dim();
    let (ns, na) = (features.n_states(), features.n_actions());
    let mut report = LipschitzReport { max_ratio: 0.0, beta, samples: n_pairs, violating_pair: None };
    for k in 0..n_pairs {
        let r = rng.raw();
        let scale = 10f64.powf(r.random_range(-2.0..2.0));
        let t1: Vec<f64> = (0..d).map(|_| scale * normal(r)).collect();
        let gap = if k % 2 == 0 { scale } else { scale * 1e-4 };
        let t2: Vec<f64> = t1.iter().map(|x| x + gap * normal(r)).collect();
        let s = r.random_range(0..ns);
        let a = r.random_range(0..na);
        let (t1, t2) = (ParamVec(t1), ParamVec(t2));
        let dist = t1.dist_sq(&t2).sqrt();
        if dist == 0.0 {
            continue;
        }
        let p1 = softmax_improve(&t1, features, beta)?.prob(s, a);
        let p2 = softmax_improve(&t2, features, beta)?.prob(s, a);
        let ratio = (p1 - p2).abs() / dist;
        if ratio > report.max_ratio {
            report.max_ratio = ratio;
        }
        if ratio > beta && report.violating_pair.is_none() {
            report.violating_pair = Some((s, a));
        }
    }
    Ok(report)
}

fn normal<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

/// Constants entering the sharpness budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInputs {
    pub a: f64,
    pub c_proj: f64,
    pub c_a: f64,
    pub c_b: f64,
    pub n_actions: usize,
    pub tau_mix: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub max_beta: f64,
}

/// `(C_proj + 1)(4 C_A (C_proj + 1) + C_b) beta |A| (1 + 4 tau) <= a / 96`.
pub fn assumption45_budget(inputs: &BudgetInputs, beta: f64) -> BudgetReport {
    let per_beta = (inputs.c_proj + 1.0)
        * (4.0 * inputs.c_a * (inputs.c_proj + 1.0) + inputs.c_b)
        * inputs.n_actions as f64
        * (1.0 + 4.0 * inputs.tau_mix as f64);
    let rhs = inputs.a / 96.0;
    let lhs = per_beta * beta;
    BudgetReport { lhs, rhs, satisfied: lhs <= rhs, max_beta: (rhs / per_beta).max(0.0) }
}
