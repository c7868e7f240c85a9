//! Finite Markov chains: stationary laws, Dobrushin coefficients and
//! mixing times, plus the state-action chain induced by an MDP and a
//! policy.

use std::hash::{DefaultHasher, Hash, Hasher};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::env::Mdp;
use crate::error::{Error, Result};
use crate::policy::Policy;

/// Residual threshold for the power-iteration fallback.
pub const POWER_ITERATION_TOL: f64 = 1e-12;
/// Iteration cap for the power-iteration fallback.
pub const POWER_ITERATION_MAX: usize = 1_000_000;
/// Slack on the `(1/4)^{floor(h/tau)}` envelope once it drops below
/// floating-point resolution.
pub const ENVELOPE_FLOOR: f64 = 1e-12;

/// Total variation distance `(1/2) sum |p_i - q_i|` between two
/// distributions.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension(format!("lengths {} and {}", p.len(), q.len())));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let sum: f64 = d.iter().sum();
        if d.iter().any(|x| *x < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::NotADistribution(format!("{name} sums to {sum}")));
        }
    }
    Ok(tv_unchecked(p, q))
}

#[inline]
pub(crate) fn tv_unchecked(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Dobrushin contraction coefficient: max over row pairs of their TV.
pub fn dobrushin(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for k in 0..m.ncols() {
                acc += (m[(i, k)] - m[(j, k)]).abs();
            }
            worst = worst.max(0.5 * acc);
        }
    }
    worst
}

/// A dense row-stochastic matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    matrix: DMatrix<f64>,
    name: String,
}

/// Stationary law of a [`MarkovChain`].
#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    pub probs: Vec<f64>,
    /// `|| mu P - mu ||_1`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingReport {
    pub tau_mix: usize,
    /// Dobrushin coefficient of `P^tau_mix`.
    pub achieved_contraction: f64,
    pub horizon_checked: usize,
}

impl MarkovChain {
    pub fn new(matrix: DMatrix<f64>, name: impl Into<String>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "transition matrix is {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        for (i, row) in matrix.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(Error::NotADistribution(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { matrix, name: name.into() })
    }

    pub fn from_rows(rows: &[Vec<f64>], name: impl Into<String>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("transition rows must be square".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat), name)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// A finite chain converges to a unique law from every start iff some
    /// power is scrambling (Dobrushin coefficient below one). Repeated
    /// squaring reaches exponents past the `n^2` bound in `O(log n)` steps.
    pub fn is_ergodic(&self) -> bool {
        let n = self.len();
        if n == 1 {
            return true;
        }
        let target = 2 * n * n;
        let mut power = self.matrix.clone();
        let mut exponent = 1usize;
        loop {
            if dobrushin(&power) < 1.0 - 1e-12 {
                return true;
            }
            if exponent >= target {
                return false;
            }
            power = &power * &power;
            exponent *= 2;
        }
    }

    /// Stationary law by a dense linear solve of `(P^T - I) mu = 0`,
    /// `sum mu = 1`, falling back to power iteration.
    pub fn stationary(&self) -> Result<Stationary> {
        if !self.is_ergodic() {
            return Err(Error::Ergodicity {
                chain: self.name.clone(),
                detail: "no power of the transition matrix is scrambling (periodic or reducible)"
                    .into(),
            });
        }
        let n = self.len();
        let mut system = self.matrix.transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            system[(n - 1, j)] = 1.0;
        }
        let mut rhs = nalgebra::DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let dense = system.lu().solve(&rhs).map(|v| v.iter().copied().collect::<Vec<f64>>());
        let candidate = dense.and_then(|mut mu| {
            clean_distribution(&mut mu)?;
            let residual = self.residual(&mu);
            (residual <= POWER_ITERATION_TOL).then_some(Stationary { probs: mu, residual })
        });
        match candidate {
            Some(s) => Ok(s),
            None => self.power_iteration(),
        }
    }

    fn power_iteration(&self) -> Result<Stationary> {
        let n = self.len();
        let mut mu = vec![1.0 / n as f64; n];
        let mut residual = f64::INFINITY;
        for _ in 0..POWER_ITERATION_MAX {
            let next = self.step_distribution(&mu);
            residual = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
            mu = next;
            if residual <= POWER_ITERATION_TOL {
                clean_distribution(&mut mu);
                let residual = self.residual(&mu);
                return Ok(Stationary { probs: mu, residual });
            }
        }
        Err(Error::Ergodicity {
            chain: self.name.clone(),
            detail: format!("power iteration stalled at residual {residual:e}"),
        })
    }

    /// `mu P`.
    pub fn step_distribution(&self, mu: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n];
        for (i, &m) in mu.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += m * self.matrix[(i, j)];
            }
        }
        out
    }

    fn residual(&self, mu: &[f64]) -> f64 {
        self.step_distribution(mu).iter().zip(mu).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Smallest `h` with `dobrushin(P^h) <= 1/4`, by direct matrix powers;
    /// the geometric envelope `(1/4)^{floor(h/tau)}` is then verified up
    /// to `horizon`.
    pub fn mixing_time(&self, horizon: usize) -> Result<MixingReport> {
        let coefficients = power_coefficients(&self.matrix, horizon);
        mixing_from_coefficients(&coefficients, horizon)
    }
}

/// `dobrushin(M^h)` for `h = 1..=horizon`.
fn power_coefficients(m: &DMatrix<f64>, horizon: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(horizon);
    let mut power = m.clone();
    for h in 1..=horizon {
        if h > 1 {
            power = &power * m;
        }
        out.push(dobrushin(&power));
    }
    out
}

/// `coefficients[h-1]` is the contraction of the `h`-step kernel.
fn mixing_from_coefficients(coefficients: &[f64], horizon: usize) -> Result<MixingReport> {
    if horizon == 0 {
        return Err(Error::Config("mixing horizon must be at least 1".into()));
    }
    let Some(idx) = coefficients.iter().position(|c| *c <= 0.25) else {
        let achieved = coefficients.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::Mixing { horizon, achieved });
    };
    let tau = idx + 1;
    for (i, c) in coefficients.iter().enumerate() {
        let h = i + 1;
        let envelope = 0.25f64.powi((h / tau) as i32);
        if *c > envelope + ENVELOPE_FLOOR {
            return Err(Error::Mixing { horizon, achieved: *c });
        }
    }
    Ok(MixingReport {
        tau_mix: tau,
        achieved_contraction: coefficients[idx],
        horizon_checked: horizon,
    })
}

/// Clamp round-off negatives and renormalise. `None` if the vector is not
/// close to a distribution.
fn clean_distribution(mu: &mut [f64]) -> Option<()> {
    if mu.iter().any(|x| !x.is_finite() || *x < -1e-9) {
        return None;
    }
    mu.iter_mut().for_each(|x| *x = x.max(0.0));
    let sum: f64 = mu.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    mu.iter_mut().for_each(|x| *x /= sum);
    Some(())
}

/// Identifies the (MDP, policy) pair a chain or stationary law was built
/// from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChainKey(pub u64);

impl ChainKey {
    pub fn of(mdp: &Mdp, policy: &Policy) -> Self {
        let mut h = DefaultHasher::new();
        mdp.n_states().hash(&mut h);
        mdp.n_actions().hash(&mut h);
        for x in mdp.kernel().iter().chain(mdp.rewards()) {
            x.to_bits().hash(&mut h);
        }
        policy.fingerprint().hash(&mut h);
        ChainKey(h.finish())
    }
}

/// Markov chain over `z = (s, a, s', a')` induced by an MDP and a policy.
///
/// The next `z` depends on the current one only through `(s', a')`, so
/// the chain is stored as the pair kernel
/// `Q((s, a), (s'', a'')) = P(s'' | s, a) pi(a'' | s'')` and expanded to
/// `|Z| x |Z|` only on request.
#[derive(Debug, Clone)]
pub struct StateActionChain {
    n_states: usize,
    n_actions: usize,
    pair: MarkovChain,
    key: ChainKey,
}

/// Stationary law of a [`StateActionChain`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    /// `nu` over states.
    pub over_states: Vec<f64>,
    /// `nu(s) pi(a|s)` over pairs.
    pub over_pairs: Vec<f64>,
    /// `mu` over `z`, row-major in `(s, a, s', a')`.
    pub over_z: Vec<f64>,
    /// `|| mu P_Z - mu ||_1`.
    pub residual: f64,
    pub key: ChainKey,
}

pub fn induced_chain(mdp: &Mdp, policy: &Policy) -> Result<StateActionChain> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let np = mdp.n_pairs();
    let mut q = DMatrix::zeros(np, np);
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            let x = mdp.pair_index(s, a);
            for (next, &p) in mdp.row(s, a).iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for b in 0..mdp.n_actions() {
                    q[(x, mdp.pair_index(next, b))] = p * policy.prob(next, b);
                }
            }
        }
    }
    for mut row in q.row_iter_mut() {
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
    let key = ChainKey::of(mdp, policy);
    Ok(StateActionChain {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        pair: MarkovChain::new(q, format!("pair-chain {:016x}", key.0))?,
        key,
    })
}

impl StateActionChain {
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn n_z(&self) -> usize {
        self.n_pairs() * self.n_pairs()
    }

    pub fn key(&self) -> ChainKey {
        self.key
    }

    /// Kernel on state-action pairs.
    pub fn pair_chain(&self) -> &MarkovChain {
        &self.pair
    }

    /// Row-major index of `z = (x, x')` for pair indices `x`, `x'`.
    #[inline]
    pub fn z_index(&self, x: usize, x_next: usize) -> usize {
        x * self.n_pairs() + x_next
    }

    /// Dense `|Z| x |Z|` transition matrix.
    pub fn z_transition(&self) -> MarkovChain {
        let np = self.n_pairs();
        let q = self.pair.matrix();
        let mut m = DMatrix::zeros(np * np, np * np);
        for x in 0..np {
            for y in 0..np {
                let from = self.z_index(x, y);
                for y2 in 0..np {
                    m[(from, self.z_index(y, y2))] = q[(y, y2)];
                }
            }
        }
        MarkovChain { matrix: m, name: format!("z-chain {:016x}", self.key.0) }
    }

    pub fn stationary(&self) -> Result<StationaryDist> {
        let pair = self.pair.stationary()?;
        let np = self.n_pairs();
        let q = self.pair.matrix();
        let mut over_states = vec![0.0; self.n_states];
        for (x, p) in pair.probs.iter().enumerate() {
            over_states[x / self.n_actions] += p;
        }
        let mut over_z = vec![0.0; np * np];
        for x in 0..np {
            for y in 0..np {
                over_z[self.z_index(x, y)] = pair.probs[x] * q[(x, y)];
            }
        }
        // (mu P_Z)(y, y') = (sum_x mu(x, y)) Q(y, y')
        let mut into = vec![0.0; np];
        for x in 0..np {
            for (y, m) in into.iter_mut().enumerate() {
                *m += over_z[self.z_index(x, y)];
            }
        }
        let mut residual = 0.0;
        for y in 0..np {
            for y2 in 0..np {
                residual += (into[y] * q[(y, y2)] - over_z[self.z_index(y, y2)]).abs();
            }
        }
        Ok(StationaryDist {
            over_states,
            over_pairs: pair.probs,
            over_z,
            residual,
            key: self.key,
        })
    }

    /// Default horizon: ten times the number of `z` states.
    pub fn default_horizon(&self) -> usize {
        10 * self.n_z()
    }

    /// Mixing time of the `z` chain. Two `z` rows after `h` steps differ
    /// only through the law of the pair reached after `h - 1` pair steps,
    /// so the `z`-chain coefficient at `h` is the pair-chain coefficient
    /// at `h - 1` (with `Q^0 = I`).
    pub fn mixing_time(&self, horizon: Option<usize>) -> Result<MixingReport> {
        let horizon = horizon.unwrap_or_else(|| self.default_horizon());
        let np = self.n_pairs();
        let mut coefficients = Vec::with_capacity(horizon);
        coefficients.push(if np > 1 { 1.0 } else { 0.0 });
        if horizon > 1 {
            coefficients.extend(power_coefficients(self.pair.matrix(), horizon - 1));
        }
        coefficients.truncate(horizon);
        mixing_from_coefficients(&coefficients, horizon)
    }
}
