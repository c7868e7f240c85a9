use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on row sums of transition kernels.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Tabular MDP of one agent: kernel `P[s][a][s']`, reward `r[s][a]` in
/// `[0, 1]` and discount `gamma` in `(0, 1)`.
///
/// Immutable after construction. Sparse cumulative successor rows are
/// precomputed for sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    kernel: Vec<f64>,
    reward: Vec<f64>,
    seed: Option<u64>,
    provenance: String,
    successors: Vec<Successors>,
}

#[derive(Debug, Clone, Default)]
struct Successors {
    states: Vec<usize>,
    cumulative: Vec<f64>,
}

impl PartialEq for Mdp {
    fn eq(&self, other: &Self) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.gamma.to_bits() == other.gamma.to_bits()
            && bits_eq(&self.kernel, &other.kernel)
            && bits_eq(&self.reward, &other.reward)
            && self.seed == other.seed
            && self.provenance == other.provenance
    }
}

fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Flat on-disk layout of an [`Mdp`]. Kernel and reward are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub kernel: Vec<f64>,
    pub reward: Vec<f64>,
    pub seed: Option<u64>,
    pub provenance: String,
}

impl TryFrom<MdpDocument> for Mdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let mut mdp = Mdp::new(doc.n_states, doc.n_actions, doc.gamma, doc.kernel, doc.reward)?;
        mdp.seed = doc.seed;
        mdp.provenance = doc.provenance;
        Ok(mdp)
    }
}

impl From<Mdp> for MdpDocument {
    fn from(m: Mdp) -> Self {
        MdpDocument {
            n_states: m.n_states,
            n_actions: m.n_actions,
            gamma: m.gamma,
            kernel: m.kernel,
            reward: m.reward,
            seed: m.seed,
            provenance: m.provenance,
        }
    }
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        kernel: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::Config("MDP needs at least one state and one action".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("discount {gamma} outside (0, 1)")));
        }
        if kernel.len() != n_states * n_actions * n_states {
            return Err(Error::Dimension(format!(
                "kernel has {} entries, expected {}",
                kernel.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("reward {r} outside [0, 1]")));
        }
        let mut successors = Vec::with_capacity(n_states * n_actions);
        for (x, row) in kernel.chunks_exact(n_states).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(Error::NotADistribution(format!("kernel row {x} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotADistribution(format!("kernel row {x} sums to {sum}")));
            }
            let mut succ = Successors::default();
            let mut acc = 0.0;
            for (s, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    acc += p;
                    succ.states.push(s);
                    succ.cumulative.push(acc);
                }
            }
            successors.push(succ);
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            kernel,
            reward,
            seed: None,
            provenance: String::new(),
            successors,
        })
    }

    pub fn with_provenance(mut self, seed: Option<u64>, provenance: impl Into<String>) -> Self {
        self.seed = seed;
        self.provenance = provenance.into();
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Number of state-action pairs.
    pub fn n_pairs(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    /// Row-major pair index of `(s, a)`.
    #[inline]
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.kernel[self.pair_index(s, a) * self.n_states + next]
    }

    /// Successor distribution `P(. | s, a)`.
    #[inline]
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = self.pair_index(s, a) * self.n_states;
        &self.kernel[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[self.pair_index(s, a)]
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Largest number of positive successors over all rows.
    pub fn branching(&self) -> usize {
        self.successors.iter().map(|s| s.states.len()).max().unwrap_or(0)
    }

    /// Next state for uniform draw `u`.
    #[inline]
    pub fn sample_next(&self, s: usize, a: usize, u: f64) -> usize {
        let succ = &self.successors[self.pair_index(s, a)];
        let i = crate::rng::sample_cumulative(&succ.cumulative, u);
        succ.states[i]
    }

    /// Same shape and discount.
    pub fn same_shape(&self, other: &Mdp) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.gamma.to_bits() == other.gamma.to_bits()
    }

    /// Affine rescaling of the rewards onto the full unit interval
    /// (minimum maps to 0, maximum to 1). Needed when a reward
    /// heterogeneity of 1 must be reachable from this environment.
    pub fn with_reward_span(&self) -> Result<Mdp> {
        let lo = self.reward.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 0.0 {
            return Err(Error::Config("constant rewards cannot be stretched".into()));
        }
        let reward = self.reward.iter().map(|r| ((r - lo) / (hi - lo)).clamp(0.0, 1.0)).collect();
        Ok(Mdp::new(self.n_states, self.n_actions, self.gamma, self.kernel.clone(), reward)?
            .with_provenance(self.seed, format!("{} +reward-span", self.provenance)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Mdp> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Entrywise mean of a list of same-shaped environments.
pub fn average_environment(mdps: &[Mdp]) -> Result<Mdp> {
    let first = mdps
        .first()
        .ok_or_else(|| Error::Config("cannot average an empty environment list".into()))?;
    if let Some(m) = mdps.iter().find(|m| !m.same_shape(first)) {
        return Err(Error::Dimension(format!(
            "cannot average {}x{} (gamma {}) with {}x{} (gamma {})",
            first.n_states, first.n_actions, first.gamma, m.n_states, m.n_actions, m.gamma
        )));
    }
    let n = mdps.len() as f64;
    let mut kernel = vec![0.0; first.kernel.len()];
    let mut reward = vec![0.0; first.reward.len()];
    for m in mdps {
        for (k, p) in kernel.iter_mut().zip(&m.kernel) {
            *k += p;
        }
        for (r, q) in reward.iter_mut().zip(&m.reward) {
            *r += q;
        }
    }
    kernel.iter_mut().for_each(|k| *k /= n);
    reward.iter_mut().for_each(|r| *r /= n);
    renormalize_rows(&mut kernel, first.n_states);
    Ok(Mdp::new(first.n_states, first.n_actions, first.gamma, kernel, reward)?
        .with_provenance(None, format!("average of {} environments", mdps.len())))
}

/// Rescale every row to sum to one (removes accumulated rounding).
pub(crate) fn renormalize_rows(kernel: &mut [f64], n_states: usize) {
    for row in kernel.chunks_exact_mut(n_states) {
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= sum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Mdp {
        Mdp::new(2, 1, 0.9, vec![0.3, 0.7, 1.0, 0.0], vec![0.5, 1.0]).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Mdp::new(2, 1, 1.0, vec![0.5, 0.5, 0.5, 0.5], vec![0.0, 0.0]).is_err());
        assert!(Mdp::new(2, 1, 0.9, vec![0.5, 0.6, 0.5, 0.5], vec![0.0, 0.0]).is_err());
        assert!(Mdp::new(2, 1, 0.9, vec![0.5, 0.5, 0.5, 0.5], vec![0.0, 1.5]).is_err());
        assert!(Mdp::new(2, 1, 0.9, vec![-0.5, 1.5, 0.5, 0.5], vec![0.0, 0.0]).is_err());
        assert!(Mdp::new(0, 1, 0.9, vec![], vec![]).is_err());
    }

    #[test]
    fn sparse_sampling_follows_support() {
        let m = toy();
        assert_eq!(m.sample_next(1, 0, 0.0), 0);
        assert_eq!(m.sample_next(1, 0, 0.9999), 0);
        assert_eq!(m.sample_next(0, 0, 0.29), 0);
        assert_eq!(m.sample_next(0, 0, 0.31), 1);
        assert_eq!(m.branching(), 2);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = toy().with_provenance(Some(3), "unit");
        let back = Mdp::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn averaging_identical_is_identity() {
        let m = toy();
        let avg = average_environment(&[m.clone(), m.clone()]).unwrap();
        assert!(bits_eq(avg.kernel(), m.kernel()));
        assert!(bits_eq(avg.rewards(), m.rewards()));
    }

    #[test]
    fn averaging_deterministic_kernels() {
        let to0 = Mdp::new(2, 1, 0.9, vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let to1 = Mdp::new(2, 1, 0.9, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let avg = average_environment(&[to0, to1]).unwrap();
        assert_eq!(avg.row(0, 0), &[0.5, 0.5]);
        assert_eq!(avg.row(1, 0), &[0.5, 0.5]);
        assert_eq!(avg.reward(0, 0), 0.5);
    }

    #[test]
    fn averaging_rejects_mismatch() {
        let a = toy();
        let b = Mdp::new(2, 1, 0.8, vec![0.3, 0.7, 1.0, 0.0], vec![0.5, 1.0]).unwrap();
        assert!(matches!(average_environment(&[a, b]), Err(Error::Dimension(_))));
    }

    #[test]
    fn reward_span_hits_both_ends() {
        let m = Mdp::new(2, 1, 0.9, vec![0.3, 0.7, 1.0, 0.0], vec![0.2, 0.6]).unwrap();
        let s = m.with_reward_span().unwrap();
        assert_eq!(s.rewards(), &[0.0, 1.0]);
    }
}
