//! Environment construction: seeded random tabular MDP pairs, a slippery
//! gridworld pair, and a CartPole simulator with a trainable pole length
//! plus the state discretizer that lets tabular learners drive it.

mod cartpole;
mod discretizer;
mod dynamics_model;
mod gridworld;
mod random;

pub use cartpole::{
    cartpole_step, cartpole_step_gradient, cartpole_step_gradient_with_step, mechanical_energy,
    next_state, CartPoleEnv, CartPoleParams, CartPoleState, ForceDirection,
};
pub use discretizer::Discretizer;
pub use dynamics_model::TabularDynamicsModel;
pub use gridworld::slippery_gridworld_pair;
pub use random::{
    mix_transition, random_floored_policy, random_mdp, random_mdp_pair, sample_categorical,
};

use rand_chacha::ChaCha8Rng;

use crate::mdp::TabularMdp;

/// Outcome of one environment step. `terminal` marks a genuine terminal
/// state whose value is zero; `truncated` marks an episode cut off by a step
/// limit, which must not mask bootstrapping.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub next_state: usize,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// A discrete-state environment a tabular learner can interact with.
pub trait Environment {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> usize;
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> StepOutcome;
}

/// Sampling wrapper around a [`TabularMdp`]. Tabular MDPs are continuing, so
/// episodes end by truncation at `episode_len` and never emit `terminal`.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    episode_len: usize,
    state: usize,
    steps: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, episode_len: usize) -> Self {
        Self {
            mdp,
            episode_len,
            state: 0,
            steps: 0,
        }
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    /// Swaps the underlying dynamics, keeping episode bookkeeping intact.
    pub fn set_mdp(&mut self, mdp: TabularMdp) {
        self.mdp = mdp;
    }
}

impl Environment for TabularEnv {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> usize {
        self.state = sample_categorical(rng, self.mdp.initial_dist().iter().copied());
        self.steps = 0;
        self.state
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> StepOutcome {
        let s = self.state;
        let next = sample_categorical(
            rng,
            self.mdp
                .transition()
                .slice(ndarray::s![s, action, ..])
                .iter()
                .copied(),
        );
        let reward = self.mdp.reward()[[s, action, next]];
        self.state = next;
        self.steps += 1;
        StepOutcome {
            next_state: next,
            reward,
            terminal: false,
            truncated: self.steps >= self.episode_len,
        }
    }
}
