//! Seeded random verification instances: a base MDP, a mixed-in perturbed
//! target, a model snapshot, and a floored policy pair.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{mix_transition, random_floored_policy, random_mdp};
use crate::error::Result;
use crate::mdp::{TabularMdp, TabularPolicy};

/// Size and discount ranges the per-seed draw picks from.
#[derive(Debug, Clone)]
pub struct InstanceRanges {
    pub n_states: (usize, usize),
    pub n_actions: (usize, usize),
    pub gammas: Vec<f64>,
    /// Per-action probability floor for generated policies.
    pub policy_floor: f64,
}

impl Default for InstanceRanges {
    fn default() -> Self {
        Self {
            n_states: (2, 10),
            n_actions: (2, 4),
            gammas: vec![0.5, 0.9, 0.95],
            policy_floor: 1e-3,
        }
    }
}

/// One verification instance. `p` doubles as the current model in the
/// three-dynamics checks, with `p_phi_old` as its snapshot.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub p: TabularMdp,
    pub p_prime: TabularMdp,
    pub p_phi_old: TabularMdp,
    pub pi: TabularPolicy,
    pub pi_prime: TabularPolicy,
    pub mix_weight: f64,
}

impl RandomInstance {
    pub fn generate(seed: u64, ranges: &InstanceRanges) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_states = rng.random_range(ranges.n_states.0..=ranges.n_states.1);
        let n_actions = rng.random_range(ranges.n_actions.0..=ranges.n_actions.1);
        let gamma = ranges.gammas[rng.random_range(0..ranges.gammas.len())];
        let p = random_mdp(&mut rng, n_states, n_actions, gamma)?;
        Self::perturb_around(seed, p, rng, ranges)
    }

    /// Builds an instance around a fixed base MDP instead of a random one;
    /// the perturbations and policies still follow the seed.
    pub fn generate_with_base(
        seed: u64,
        base: &TabularMdp,
        ranges: &InstanceRanges,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Burn the draws a generated instance would consume so the
        // perturbation stream stays seed-aligned.
        let _ = rng.random_range(ranges.n_states.0..=ranges.n_states.1);
        let _ = rng.random_range(ranges.n_actions.0..=ranges.n_actions.1);
        let _ = rng.random_range(0..ranges.gammas.len());
        Self::perturb_around(seed, base.clone(), rng, ranges)
    }

    fn perturb_around(
        seed: u64,
        p: TabularMdp,
        mut rng: ChaCha8Rng,
        ranges: &InstanceRanges,
    ) -> Result<Self> {
        let n_states = p.n_states();
        let n_actions = p.n_actions();
        let mix_weight: f64 = rng.random();
        let p_prime = p.with_transition(mix_transition(&mut rng, p.transition(), mix_weight)?)?;
        // The snapshot sits closer to the model than the target typically is.
        let snapshot_mix = mix_weight * rng.random::<f64>();
        let p_phi_old =
            p.with_transition(mix_transition(&mut rng, p.transition(), snapshot_mix)?)?;

        let pi = random_floored_policy(&mut rng, n_states, n_actions, ranges.policy_floor)?;
        let base_policy =
            random_floored_policy(&mut rng, n_states, n_actions, ranges.policy_floor)?;
        let policy_mix: f64 = rng.random();
        let mut probs = pi.probs().clone();
        for ((s, a), v) in probs.indexed_iter_mut() {
            *v = (1.0 - policy_mix) * *v + policy_mix * base_policy.probs()[[s, a]];
        }
        let pi_prime = TabularPolicy::new(probs)?;

        Ok(Self {
            seed,
            p,
            p_prime,
            p_phi_old,
            pi,
            pi_prime,
            mix_weight,
        })
    }
}
