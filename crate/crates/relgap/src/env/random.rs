//! Seeded random MDP construction: symmetric Dirichlet(1) transition rows,
//! uniform rewards, and row-wise mixtures for controlled perturbations.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

/// Samples from a finite distribution given by an iterator of probabilities.
pub fn sample_categorical(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// A symmetric Dirichlet(1) draw: normalized unit exponentials.
pub fn dirichlet_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut row: Vec<f64> = (0..n)
        .map(|_| -(rng.random::<f64>().max(1e-300)).ln())
        .collect();
    let sum: f64 = row.iter().sum();
    for x in &mut row {
        *x /= sum;
    }
    row
}

/// A random MDP: Dirichlet(1) transition rows and initial distribution,
/// rewards uniform in `[0, 1]`.
pub fn random_mdp(
    rng: &mut ChaCha8Rng,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::DimensionMismatch(
            "state and action spaces must be non-empty".into(),
        ));
    }
    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    let mut reward = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            for (sn, v) in dirichlet_row(rng, n_states).into_iter().enumerate() {
                transition[[s, a, sn]] = v;
            }
            for sn in 0..n_states {
                reward[[s, a, sn]] = rng.random::<f64>();
            }
        }
    }
    let rho = Array1::from_vec(dirichlet_row(rng, n_states));
    TabularMdp::new(transition, reward, rho, gamma)
}

/// Row-wise mixture of a transition tensor with fresh Dirichlet(1) rows at
/// weight `mix_weight`. The perturbation draw is independent of the weight,
/// so the TV divergence from the base scales linearly in it.
pub fn mix_transition(
    rng: &mut ChaCha8Rng,
    base: &Array3<f64>,
    mix_weight: f64,
) -> Result<Array3<f64>> {
    if !(0.0..=1.0).contains(&mix_weight) {
        return Err(Error::InvalidValue(format!(
            "mix weight must lie in [0, 1], got {mix_weight}"
        )));
    }
    let (n_states, n_actions, _) = base.dim();
    let mut out = base.clone();
    for s in 0..n_states {
        for a in 0..n_actions {
            let fresh = dirichlet_row(rng, n_states);
            for sn in 0..n_states {
                out[[s, a, sn]] = (1.0 - mix_weight) * base[[s, a, sn]] + mix_weight * fresh[sn];
            }
        }
    }
    Ok(out)
}

/// A source/target pair sharing rewards, initial distribution and discount:
/// the target's rows are the source's mixed with independent Dirichlet rows
/// at `mix_weight`.
pub fn random_mdp_pair(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    mix_weight: f64,
) -> Result<(TabularMdp, TabularMdp)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = random_mdp(&mut rng, n_states, n_actions, gamma)?;
    let target_transition = mix_transition(&mut rng, source.transition(), mix_weight)?;
    let target = source.with_transition(target_transition)?;
    Ok((source, target))
}

/// A random policy with Dirichlet(1) rows floored at `floor` per action, so
/// density ratios and entropies stay well-defined.
pub fn random_floored_policy(
    rng: &mut ChaCha8Rng,
    n_states: usize,
    n_actions: usize,
    floor: f64,
) -> Result<TabularPolicy> {
    if floor.is_nan() || floor < 0.0 || floor * n_actions as f64 >= 1.0 {
        return Err(Error::InvalidValue(format!(
            "policy floor {floor} too large for {n_actions} actions"
        )));
    }
    let scale = 1.0 - floor * n_actions as f64;
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        for (a, v) in dirichlet_row(rng, n_actions).into_iter().enumerate() {
            probs[[s, a]] = floor + scale * v;
        }
    }
    TabularPolicy::new(probs)
}
