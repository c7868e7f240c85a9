//! Linear function approximation: feature maps, TD matrices, their
//! stationary expectations, the TD step and the projection ball.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{ChainKey, Mdp, StationaryDist, Transition};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::{Purpose, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeatureKind {
    #[default]
    OneHot,
    RandomUnit { dim: usize, seed: u64 },
}

/// Embedding `phi(s, a)` in `R^d`, stored row-major by pair index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dim: usize,
    n_states: usize,
    n_actions: usize,
    table: Vec<f64>,
    kind: FeatureKind,
}

impl FeatureMap {
    pub fn build(kind: FeatureKind, n_states: usize, n_actions: usize) -> Result<Self> {
        match kind {
            FeatureKind::OneHot => Ok(features_one_hot(n_states, n_actions)),
            FeatureKind::RandomUnit { dim, seed } => features_random_unit(n_states, n_actions, dim, seed),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn is_one_hot(&self) -> bool {
        self.kind == FeatureKind::OneHot
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.dim;
        &self.table[start..start + self.dim]
    }

    /// `phi(s, a)^T theta`.
    #[inline]
    pub fn value(&self, theta: &[f64], s: usize, a: usize) -> f64 {
        if self.is_one_hot() {
            theta[s * self.n_actions + a]
        } else {
            dot(self.phi(s, a), theta)
        }
    }

    /// Feature matrix with one row per pair.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_states * self.n_actions, self.dim, &self.table)
    }

    /// Largest feature norm.
    pub fn max_norm(&self) -> f64 {
        self.table.chunks_exact(self.dim).map(norm).fold(0.0, f64::max)
    }

    fn matches(&self, mdp: &Mdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::Dimension(format!(
                "features are for {}x{}, MDP is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Canonical basis embedding: `phi(s, a) = e_{s |A| + a}`.
pub fn features_one_hot(n_states: usize, n_actions: usize) -> FeatureMap {
    let d = n_states * n_actions;
    let mut table = vec![0.0; d * d];
    for i in 0..d {
        table[i * d + i] = 1.0;
    }
    FeatureMap { dim: d, n_states, n_actions, table, kind: FeatureKind::OneHot }
}

/// Gaussian rows, jointly rescaled so the largest has unit norm.
pub fn features_random_unit(n_states: usize, n_actions: usize, dim: usize, seed: u64) -> Result<FeatureMap> {
    if dim == 0 || n_states == 0 || n_actions == 0 {
        return Err(Error::Config("feature dimension and sizes must be positive".into()));
    }
    let mut stream = RngStream::new(seed, Purpose::Generate, 1);
    let rng = stream.raw();
    let mut table: Vec<f64> =
        (0..n_states * n_actions * dim).map(|_| StandardNormal.sample(rng)).collect();
    let max = table.chunks_exact(dim).map(norm).fold(0.0, f64::max);
    table.iter_mut().for_each(|x| *x /= max);
    Ok(FeatureMap { dim, n_states, n_actions, table, kind: FeatureKind::RandomUnit { dim, seed } })
}

/// Weights of the linear Q-function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVec(pub Vec<f64>);

impl ParamVec {
    pub fn zeros(dim: usize) -> Self {
        ParamVec(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dist_sq(&self, other: &ParamVec) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        ParamVec(v.iter().copied().collect())
    }
}

impl From<Vec<f64>> for ParamVec {
    fn from(v: Vec<f64>) -> Self {
        ParamVec(v)
    }
}

/// `A(z)` and `b(z)`, or their expectations.
#[derive(Debug, Clone, PartialEq)]
pub struct TdPair {
    pub a_mat: DMatrix<f64>,
    pub b_vec: DVector<f64>,
}

impl TdPair {
    /// `A theta + b`.
    pub fn apply(&self, theta: &ParamVec) -> DVector<f64> {
        &self.a_mat * theta.to_dvector() + &self.b_vec
    }
}

/// `A(z) = phi(s,a) (gamma phi(s',a') - phi(s,a))^T`, `b(z) = phi(s,a) r(s,a)`.
pub fn td_matrices(t: &Transition, features: &FeatureMap, gamma: f64) -> TdPair {
    let phi = DVector::from_column_slice(features.phi(t.state, t.action));
    let phi_next = DVector::from_column_slice(features.phi(t.next_state, t.next_action));
    let diff = phi_next * gamma - &phi;
    TdPair { a_mat: &phi * diff.transpose(), b_vec: phi * t.reward }
}

/// Exact stationary expectations `A_bar = sum_z mu(z) A(z)` and
/// `b_bar = sum_z mu(z) b(z)`, enumerating every `z` with positive mass.
pub fn expected_td(
    mdp: &Mdp,
    policy: &Policy,
    features: &FeatureMap,
    stationary: &StationaryDist,
) -> Result<TdPair> {
    features.matches(mdp)?;
    if stationary.key != ChainKey::of(mdp, policy) {
        return Err(Error::Consistency(
            "stationary distribution was computed for a different MDP or policy".into(),
        ));
    }
    let d = features.dim();
    let gamma = mdp.gamma();
    let n_actions = mdp.n_actions();
    let np = mdp.n_pairs();
    let mut a_mat = DMatrix::zeros(d, d);
    let mut b_vec = DVector::zeros(d);
    for x in 0..np {
        let (s, a) = (x / n_actions, x % n_actions);
        let r = mdp.reward(s, a);
        for y in 0..np {
            let w = stationary.over_z[x * np + y];
            if w == 0.0 {
                continue;
            }
            let (s2, a2) = (y / n_actions, y % n_actions);
            if features.is_one_hot() {
                a_mat[(x, x)] -= w;
                a_mat[(x, y)] += gamma * w;
                b_vec[x] += w * r;
            } else {
                let phi = features.phi(s, a);
                let phi2 = features.phi(s2, a2);
                for i in 0..d {
                    let wi = w * phi[i];
                    if wi == 0.0 {
                        continue;
                    }
                    for j in 0..d {
                        a_mat[(i, j)] += wi * (gamma * phi2[j] - phi[j]);
                    }
                    b_vec[i] += wi * r;
                }
            }
        }
    }
    Ok(TdPair { a_mat, b_vec })
}

/// In-place TD step `theta += eta * delta * phi(s, a)` with
/// `delta = r(s, a) + gamma Q(s', a') - Q(s, a)`. Returns `delta`.
///
/// Fails if `delta` or the updated coordinates are not finite.
#[inline]
pub fn td_update(
    theta: &mut [f64],
    t: &Transition,
    eta: f64,
    features: &FeatureMap,
    gamma: f64,
) -> std::result::Result<f64, NonFinite> {
    let delta = t.reward + gamma * features.value(theta, t.next_state, t.next_action)
        - features.value(theta, t.state, t.action);
    if !delta.is_finite() {
        return Err(NonFinite);
    }
    if features.is_one_hot() {
        let i = t.state * features.n_actions() + t.action;
        theta[i] += eta * delta;
        if !theta[i].is_finite() {
            return Err(NonFinite);
        }
    } else {
        for (w, p) in theta.iter_mut().zip(features.phi(t.state, t.action)) {
            *w += eta * delta * p;
        }
    }
    Ok(delta)
}

/// Marker for a TD step that left the finite range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFinite;

/// Pure form of [`td_update`].
pub fn td_step(
    theta: &ParamVec,
    t: &Transition,
    eta: f64,
    features: &FeatureMap,
    gamma: f64,
) -> Result<ParamVec> {
    if eta < 0.0 {
        return Err(Error::Config(format!("step size {eta} is negative")));
    }
    let mut out = theta.clone();
    td_update(&mut out.0, t, eta, features, gamma).map_err(|_| Error::Numeric { round: 0, step: 0 })?;
    if !out.is_finite() {
        return Err(Error::Numeric { round: 0, step: 0 });
    }
    Ok(out)
}

/// Euclidean ball `W = { theta : ||theta|| <= radius }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBall {
    pub radius: f64,
}

impl ProjectionBall {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Config(format!("projection radius {radius} must be positive")));
        }
        Ok(Self { radius })
    }

    /// `sqrt(d) / (1 - gamma)`: bounds every one-hot `Q` with rewards in
    /// `[0, 1]`.
    pub fn default_for(dim: usize, gamma: f64) -> Self {
        Self { radius: (dim as f64).sqrt() / (1.0 - gamma) }
    }

    pub fn contains(&self, theta: &ParamVec) -> bool {
        theta.norm() <= self.radius
    }
}

pub fn project(theta: &ParamVec, ball: ProjectionBall) -> ParamVec {
    let mut out = theta.clone();
    project_in_place(&mut out.0, ball);
    out
}

#[inline]
pub fn project_in_place(theta: &mut [f64], ball: ProjectionBall) {
    let n = norm(theta);
    if n > ball.radius {
        let scale = ball.radius / n;
        theta.iter_mut().for_each(|x| *x *= scale);
        // rounding can leave the result an ulp outside; shrink until inside
        while norm(theta) > ball.radius {
            theta.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
        }
    }
}

/// Norm diagnostics for the bounds `||A|| <= 1 + gamma`, `||b|| <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdNormReport {
    /// `max_z ||A(z)||_F`.
    pub max_a_per_sample: f64,
    /// `max_z ||b(z)||`.
    pub max_b_per_sample: f64,
    /// `max_z` spectral norm of `A(z)`.
    pub max_a_spectral: f64,
    /// `sqrt(sum_ij sup_z A_ij(z)^2)`.
    pub a_entrywise_sup: f64,
    /// `sqrt(sum_i sup_z b_i(z)^2)`.
    pub b_entrywise_sup: f64,
}

/// Scans every `z` in `(S x A)^2` regardless of its probability.
pub fn td_norms(mdp: &Mdp, features: &FeatureMap) -> Result<TdNormReport> {
    features.matches(mdp)?;
    let d = features.dim();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut sup_a = vec![0.0f64; d * d];
    let mut sup_b = vec![0.0f64; d];
    let mut rep = TdNormReport {
        max_a_per_sample: 0.0,
        max_b_per_sample: 0.0,
        max_a_spectral: 0.0,
        a_entrywise_sup: 0.0,
        b_entrywise_sup: 0.0,
    };
    for s in 0..ns {
        for a in 0..na {
            for s2 in 0..ns {
                for a2 in 0..na {
                    let t = Transition {
                        state: s,
                        action: a,
                        reward: mdp.reward(s, a),
                        next_state: s2,
                        next_action: a2,
                    };
                    let pair = td_matrices(&t, features, mdp.gamma());
                    // rank one: spectral norm = Frobenius norm
                    let fro = pair.a_mat.norm();
                    rep.max_a_per_sample = rep.max_a_per_sample.max(fro);
                    rep.max_a_spectral = rep.max_a_spectral.max(fro);
                    rep.max_b_per_sample = rep.max_b_per_sample.max(pair.b_vec.norm());
                    for (sup, v) in sup_a.iter_mut().zip(pair.a_mat.transpose().iter()) {
                        *sup = sup.max(v * v);
                    }
                    for (sup, v) in sup_b.iter_mut().zip(pair.b_vec.iter()) {
                        *sup = sup.max(v * v);
                    }
                }
            }
        }
    }
    rep.a_entrywise_sup = sup_a.iter().sum::<f64>().sqrt();
    rep.b_entrywise_sup = sup_b.iter().sum::<f64>().sqrt();
    Ok(rep)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
