use rand::seq::index;
use rand::Rng;

use crate::env::chain::{induced_chain, tv_unchecked};
use crate::env::mdp::{renormalize_rows, Mdp};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::rng::{Purpose, RngStream};

/// Reseeding budget for Garnet draws whose pair chain is not ergodic under
/// the uniform policy.
pub const MAX_GARNET_ATTEMPTS: u64 = 100;

/// Random Garnet MDP: each `(s, a)` moves to `branching` distinct states
/// with masses given by the gaps between sorted uniform cut-points;
/// rewards are uniform on `[0, 1]`.
///
/// Draws whose induced chain is not ergodic under the uniform policy are
/// redrawn with `seed + 1`, `seed + 2`, ... The seed actually used is
/// recorded on the result.
pub fn garnet(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    gamma: f64,
    seed: u64,
) -> Result<Mdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::Config("Garnet needs at least one state and one action".into()));
    }
    if branching == 0 || branching > n_states {
        return Err(Error::Config(format!(
            "branching factor {branching} must lie in [1, {n_states}]"
        )));
    }
    for attempt in 0..MAX_GARNET_ATTEMPTS {
        let used = seed.wrapping_add(attempt);
        let mdp = garnet_draw(n_states, n_actions, branching, gamma, used)?;
        let uniform = Policy::uniform(n_states, n_actions);
        if induced_chain(&mdp, &uniform)?.pair_chain().is_ergodic() {
            return Ok(mdp);
        }
        log::debug!("garnet seed {used} gives a non-ergodic chain, reseeding");
    }
    Err(Error::Config(format!(
        "no ergodic Garnet({n_states},{n_actions},{branching}) within {MAX_GARNET_ATTEMPTS} seeds from {seed}"
    )))
}

fn garnet_draw(
    n_states: usize,
    n_actions: usize,
    branching: usize,
    gamma: f64,
    seed: u64,
) -> Result<Mdp> {
    let mut stream = RngStream::new(seed, Purpose::Generate, 0);
    let rng = stream.raw();
    let mut kernel = vec![0.0; n_states * n_actions * n_states];
    let mut cuts = Vec::with_capacity(branching + 1);
    for row in kernel.chunks_exact_mut(n_states) {
        let successors = index::sample(rng, n_states, branching);
        let masses = loop {
            cuts.clear();
            cuts.push(0.0);
            cuts.extend((1..branching).map(|_| rng.random::<f64>()));
            cuts.push(1.0);
            cuts.sort_by(f64::total_cmp);
            let masses: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
            if masses.iter().all(|m| *m > 0.0) {
                break masses;
            }
        };
        for (s, m) in successors.iter().zip(masses) {
            row[s] = m;
        }
    }
    renormalize_rows(&mut kernel, n_states);
    let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    Ok(Mdp::new(n_states, n_actions, gamma, kernel, reward)?.with_provenance(
        Some(seed),
        format!("garnet(n_states={n_states}, n_actions={n_actions}, branching={branching}, seed={seed})"),
    ))
}

/// Largest kernel-row TV between two same-shaped environments.
pub(crate) fn max_row_tv(a: &Mdp, b: &Mdp) -> f64 {
    a.kernel()
        .chunks_exact(a.n_states())
        .zip(b.kernel().chunks_exact(b.n_states()))
        .map(|(p, q)| tv_unchecked(p, q))
        .fold(0.0, f64::max)
}

/// Largest absolute reward difference.
pub(crate) fn max_reward_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const TARGET_TOL: f64 = 1e-9;

/// Heterogeneous copy of `base`: the kernel is mixed with a fresh Garnet
/// kernel and the rewards are pushed towards fresh Garnet rewards, with the
/// two mixing weights chosen so the kernel-row TV and reward sup-gap to
/// `base` equal `target_eps_p` and `target_eps_r`.
///
/// The kernel map is linear in its weight, so the weight is exact. The
/// reward map `clip((1 - w) r + w r_fresh)` is monotone in `w >= 0` but
/// kinks at saturation, so its weight is found by bisection.
pub fn perturb(base: &Mdp, target_eps_p: f64, target_eps_r: f64, seed: u64) -> Result<Mdp> {
    for (name, t) in [("eps_p", target_eps_p), ("eps_r", target_eps_r)] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("{name} target {t} outside [0, 1]")));
        }
    }
    let fresh = garnet(base.n_states(), base.n_actions(), base.branching(), base.gamma(), seed)?;

    let mut kernel = base.kernel().to_vec();
    if target_eps_p > 0.0 {
        let reach = max_row_tv(base, &fresh);
        if reach + 1e-12 < target_eps_p {
            return Err(Error::Unreachable {
                what: "kernel heterogeneity",
                target: target_eps_p,
                max_achievable: reach,
            });
        }
        let w = (target_eps_p / reach).min(1.0);
        for (k, f) in kernel.iter_mut().zip(fresh.kernel()) {
            *k = (1.0 - w) * *k + w * f;
        }
        renormalize_rows(&mut kernel, base.n_states());
    }

    let reward = if target_eps_r > 0.0 {
        perturb_rewards(base.rewards(), fresh.rewards(), target_eps_r)?
    } else {
        base.rewards().to_vec()
    };

    let out = Mdp::new(base.n_states(), base.n_actions(), base.gamma(), kernel, reward)?
        .with_provenance(
            Some(seed),
            format!(
                "perturb(eps_p={target_eps_p}, eps_r={target_eps_r}, seed={seed}) of [{}]",
                base.provenance()
            ),
        );
    let got_p = max_row_tv(base, &out);
    let got_r = max_reward_gap(base.rewards(), out.rewards());
    if (got_p - target_eps_p).abs() > TARGET_TOL || (got_r - target_eps_r).abs() > TARGET_TOL {
        return Err(Error::Unreachable {
            what: "heterogeneity targets",
            target: target_eps_p.max(target_eps_r),
            max_achievable: got_p.max(got_r),
        });
    }
    Ok(out)
}

fn mixed_rewards(base: &[f64], fresh: &[f64], w: f64) -> Vec<f64> {
    base.iter().zip(fresh).map(|(r, f)| ((1.0 - w) * r + w * f).clamp(0.0, 1.0)).collect()
}

fn perturb_rewards(base: &[f64], fresh: &[f64], target: f64) -> Result<Vec<f64>> {
    // Full saturation: every entry pushed to the bound on its side.
    let reach = base
        .iter()
        .zip(fresh)
        .map(|(r, f)| {
            if f > r {
                1.0 - r
            } else if f < r {
                *r
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    if reach + 1e-12 < target {
        return Err(Error::Unreachable {
            what: "reward heterogeneity",
            target,
            max_achievable: reach,
        });
    }
    let w_hi = base
        .iter()
        .zip(fresh)
        .filter(|(r, f)| r != f)
        .map(|(r, f)| if f > r { (1.0 - r) / (f - r) } else { r / (r - f) })
        .fold(0.0, f64::max);
    let gap = |w: f64| max_reward_gap(base, &mixed_rewards(base, fresh, w));
    let (mut lo, mut hi) = (0.0, w_hi);
    if gap(hi) <= target {
        return Ok(mixed_rewards(base, fresh, hi));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid);
        if (g - target).abs() <= 1e-13 {
            return Ok(mixed_rewards(base, fresh, mid));
        }
        if g < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    Ok(mixed_rewards(base, fresh, 0.5 * (lo + hi)))
}
