//! Sample-based tabular soft Q-learning with replay buffers: the learner
//! every transfer algorithm drives.
//!
//! The policy is implicit: `softmax(q / alpha)` is the exact minimizer of
//! the soft policy objective over unconstrained per-state distributions, so
//! no separate actor table is kept here. A bootstrap target table tracks the
//! value table through Polyak averaging.

use std::collections::VecDeque;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{sample_categorical, CartPoleEnv, CartPoleState, Environment};
use crate::error::{Error, Result};
use crate::mdp::{soft_greedy_improvement, TabularPolicy};

/// Where a transition was collected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Source,
    Target,
}

/// One environment transition on discretized state indices.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
    pub origin: Origin,
}

/// A transition that additionally retains the continuous CartPole states.
#[derive(Debug, Clone, Copy)]
pub struct PhysicalTransition {
    pub indexed: Transition,
    pub state: CartPoleState,
    pub next_state: CartPoleState,
}

/// Bounded FIFO with a seeded uniform-with-replacement sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    entries: VecDeque<T>,
    capacity: usize,
    rng: ChaCha8Rng,
}

impl<T: Clone> ReplayBuffer<T> {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity.min(1 << 20)),
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, item: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> std::collections::vec_deque::Iter<'_, T> {
        self.entries.iter()
    }

    /// Uniform sample with replacement; deterministic under a fixed seed and
    /// insertion order.
    pub fn sample(&mut self, batch_size: usize) -> Vec<T> {
        let n = self.entries.len();
        assert!(n > 0, "cannot sample from an empty buffer");
        (0..batch_size)
            .map(|_| self.entries[self.rng.random_range(0..n)].clone())
            .collect()
    }
}

/// Hyperparameters of the tabular soft Q-learner.
#[derive(Debug, Clone, Copy)]
pub struct SoftLearnerConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    /// Polyak coefficient: target <- polyak * target + (1 - polyak) * q.
    pub polyak: f64,
    /// Initial value of every q entry; optimistic values drive exploration.
    pub q_init: f64,
}

impl Default for SoftLearnerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            learning_rate: 0.1,
            polyak: 0.995,
            q_init: 0.0,
        }
    }
}

/// Value table, its Polyak-averaged bootstrap copy, and the hyperparameters.
#[derive(Debug, Clone)]
pub struct SoftLearnerState {
    pub q_table: Array2<f64>,
    pub target_q_table: Array2<f64>,
    pub temperature: f64,
    pub learning_rate: f64,
    pub polyak: f64,
    discount: f64,
}

impl SoftLearnerState {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        discount: f64,
        config: SoftLearnerConfig,
    ) -> Self {
        let q_table = Array2::from_elem((n_states, n_actions), config.q_init);
        Self {
            target_q_table: q_table.clone(),
            q_table,
            temperature: config.temperature,
            learning_rate: config.learning_rate,
            polyak: config.polyak,
            discount,
        }
    }

    /// Reassembles a learner from saved tables and hyperparameters.
    pub fn from_parts(
        q_table: Array2<f64>,
        target_q_table: Array2<f64>,
        discount: f64,
        temperature: f64,
        learning_rate: f64,
        polyak: f64,
    ) -> Result<Self> {
        if q_table.dim() != target_q_table.dim() {
            return Err(Error::DimensionMismatch(
                "q table and target table shapes differ".into(),
            ));
        }
        if q_table
            .iter()
            .chain(target_q_table.iter())
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidValue(
                "non-finite entry in learner tables".into(),
            ));
        }
        Ok(Self {
            q_table,
            target_q_table,
            temperature,
            learning_rate,
            polyak,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.q_table.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.q_table.ncols()
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Softmax action probabilities at one state.
    pub fn action_probs(&self, state: usize) -> Array1<f64> {
        softmax_row(self.q_table.row(state).to_owned(), self.temperature)
    }

    /// The implied policy over every state; always full-support.
    pub fn implied_policy(&self) -> TabularPolicy {
        soft_greedy_improvement(&self.q_table, self.temperature).expect("finite q table")
    }

    /// Soft state value under a given table and the implied policy of the
    /// live table: `sum_a pi(a|s) (table(s,a) - alpha log pi(a|s))`.
    fn soft_value(&self, table: &Array2<f64>, state: usize) -> f64 {
        let probs = self.action_probs(state);
        let mut v = 0.0;
        for a in 0..self.n_actions() {
            let p = probs[a];
            if p > 0.0 {
                v += p * (table[[state, a]] - self.temperature * p.ln());
            }
        }
        v
    }

    /// Soft state values of the live q table at every state.
    pub fn soft_state_values(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n_states()).map(|s| self.soft_value(&self.q_table, s)))
    }

    /// TD targets `r + gamma (1 - done) V_bar(s')` of a batch under the
    /// current tables, with the bootstrap read from the target table.
    pub fn bootstrap_targets(&self, batch: &[Transition]) -> Vec<f64> {
        batch
            .iter()
            .map(|t| {
                let bootstrap = if t.done {
                    0.0
                } else {
                    self.soft_value(&self.target_q_table, t.next_state)
                };
                t.reward + self.discount * bootstrap
            })
            .collect()
    }

    /// One semi-gradient sweep over a batch: targets are computed against
    /// the pre-update tables, entries move toward them at the learning rate,
    /// then the bootstrap table is Polyak-updated. Returns the mean squared
    /// soft Bellman residual of the batch before the update.
    pub fn soft_q_update(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("soft_q_update"));
        }
        let targets = self.bootstrap_targets(batch);
        let mut residual = 0.0;
        for (t, &y) in batch.iter().zip(&targets) {
            let q = self.q_table[[t.state, t.action]];
            residual += (y - q) * (y - q);
        }
        residual /= batch.len() as f64;
        for (t, &y) in batch.iter().zip(&targets) {
            let q = &mut self.q_table[[t.state, t.action]];
            *q += self.learning_rate * (y - *q);
        }
        let polyak = self.polyak;
        self.target_q_table.zip_mut_with(&self.q_table, |tq, &q| {
            *tq = polyak * *tq + (1.0 - polyak) * q;
        });
        Ok(residual)
    }

    /// Mean squared soft Bellman residual of a batch without updating.
    pub fn soft_bellman_residual(&self, batch: &[Transition]) -> f64 {
        let mut residual = 0.0;
        for t in batch {
            let bootstrap = if t.done {
                0.0
            } else {
                self.soft_value(&self.target_q_table, t.next_state)
            };
            let y = t.reward + self.discount * bootstrap;
            let q = self.q_table[[t.state, t.action]];
            residual += (y - q) * (y - q);
        }
        residual / batch.len() as f64
    }

    /// Mean entropy of the implied policy over all states.
    pub fn mean_entropy(&self) -> f64 {
        let pi = self.implied_policy();
        pi.entropy().mean().unwrap_or(0.0)
    }
}

fn softmax_row(row: Array1<f64>, alpha: f64) -> Array1<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = row.mapv(|q| ((q - max) / alpha).exp());
    let sum = out.sum();
    out.mapv_inplace(|e| e / sum);
    out
}

/// Return and length of one collected episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeStats {
    pub episode_return: f64,
    pub steps: usize,
}

/// Runs one episode with an arbitrary state-indexed policy, pushing every
/// transition into the buffer. Returns the undiscounted episode return.
pub fn collect_episode_with<F>(
    env: &mut impl Environment,
    mut action_probs: F,
    rng: &mut ChaCha8Rng,
    buffer: &mut ReplayBuffer<Transition>,
    origin: Origin,
) -> EpisodeStats
where
    F: FnMut(usize) -> Array1<f64>,
{
    let mut state = env.reset(rng);
    let mut episode_return = 0.0;
    let mut steps = 0usize;
    loop {
        let action = sample_categorical(rng, action_probs(state).iter().copied());
        let outcome = env.step(action, rng);
        episode_return += outcome.reward;
        steps += 1;
        buffer.push(Transition {
            state,
            action,
            reward: outcome.reward,
            next_state: outcome.next_state,
            done: outcome.terminal,
            origin,
        });
        state = outcome.next_state;
        if outcome.terminal || outcome.truncated {
            return EpisodeStats {
                episode_return,
                steps,
            };
        }
    }
}

/// [`collect_episode_with`] driven by the learner's implied softmax policy.
pub fn collect_episode(
    env: &mut impl Environment,
    learner: &SoftLearnerState,
    rng: &mut ChaCha8Rng,
    buffer: &mut ReplayBuffer<Transition>,
    origin: Origin,
) -> EpisodeStats {
    collect_episode_with(env, |s| learner.action_probs(s), rng, buffer, origin)
}

/// CartPole episode that retains continuous states alongside the indices.
pub fn collect_cartpole_episode<F>(
    env: &mut CartPoleEnv,
    mut action_probs: F,
    rng: &mut ChaCha8Rng,
    buffer: &mut ReplayBuffer<PhysicalTransition>,
    origin: Origin,
) -> EpisodeStats
where
    F: FnMut(usize) -> Array1<f64>,
{
    let mut state_idx = env.reset(rng);
    let mut episode_return = 0.0;
    let mut steps = 0usize;
    loop {
        let continuous = env.continuous_state();
        let action = sample_categorical(rng, action_probs(state_idx).iter().copied());
        let (next_continuous, reward, terminal, truncated) = env.step_continuous(action);
        let next_idx = env.discretizer().index(&next_continuous);
        episode_return += reward;
        steps += 1;
        buffer.push(PhysicalTransition {
            indexed: Transition {
                state: state_idx,
                action,
                reward,
                next_state: next_idx,
                done: terminal,
                origin,
            },
            state: continuous,
            next_state: next_continuous,
        });
        state_idx = next_idx;
        if terminal || truncated {
            return EpisodeStats {
                episode_return,
                steps,
            };
        }
    }
}

/// Telemetry row of the sample-based learner: one line per episode.
#[derive(Debug, Clone, Copy)]
pub struct PretrainRow {
    pub step: u64,
    pub episode_return: f64,
    pub soft_bellman_residual: f64,
    pub entropy: f64,
}

/// Plain soft Q-learning schedule.
#[derive(Debug, Clone, Copy)]
pub struct PretrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub updates_per_step: usize,
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    /// Stop once a periodic evaluation reaches this mean return.
    pub stop_return: Option<f64>,
    /// Value-table step size after half the budget; damping the late-stage
    /// churn of near-greedy tabular policies.
    pub learning_rate_final: f64,
    /// Evaluate the frozen learner every this many episodes (0 disables);
    /// the best-scoring snapshot is what pretraining returns.
    pub eval_every_episodes: usize,
    pub eval_episodes: usize,
    pub discount: f64,
    pub learner: SoftLearnerConfig,
}

impl PretrainConfig {
    /// CartPole schedule: optimistic initialization at half the value
    /// ceiling drives exploration under the near-greedy low temperature
    /// without wasting episodes decaying unreachable optimism.
    pub fn cartpole_default() -> Self {
        let discount = 0.99;
        Self {
            max_steps: 200_000,
            batch_size: 64,
            updates_per_step: 1,
            warmup_steps: 1_000,
            buffer_capacity: 100_000,
            stop_return: None,
            learning_rate_final: 0.02,
            eval_every_episodes: 20,
            eval_episodes: 10,
            discount,
            learner: SoftLearnerConfig {
                temperature: 0.05,
                learning_rate: 0.1,
                polyak: 0.995,
                q_init: 0.5 / (1.0 - discount),
            },
        }
    }

    pub fn tabular_default(discount: f64) -> Self {
        Self {
            max_steps: 30_000,
            batch_size: 64,
            updates_per_step: 1,
            warmup_steps: 500,
            buffer_capacity: 100_000,
            stop_return: None,
            learning_rate_final: 0.02,
            eval_every_episodes: 20,
            eval_episodes: 5,
            discount,
            learner: SoftLearnerConfig {
                temperature: 0.2,
                learning_rate: 0.1,
                polyak: 0.995,
                q_init: 0.0,
            },
        }
    }
}

/// Trains a fresh learner in one environment with its own implied policy.
/// Returns the snapshot with the best periodic evaluation (training can
/// degrade a peaked tabular policy) alongside the per-episode telemetry.
pub fn pretrain<E: Environment + Clone>(
    env: &mut E,
    seed: u64,
    config: &PretrainConfig,
) -> Result<(SoftLearnerState, Vec<PretrainRow>)> {
    let mut learner = SoftLearnerState::new(
        env.n_states(),
        env.n_actions(),
        config.discount,
        config.learner,
    );
    let mut buffer: ReplayBuffer<Transition> =
        ReplayBuffer::new(config.buffer_capacity, seed.wrapping_add(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut best: Option<(f64, SoftLearnerState)> = None;
    let mut episodes_done = 0usize;
    let mut eval_counter = 0u64;

    let mut state = env.reset(&mut rng);
    let mut episode_return = 0.0;
    let mut last_residual = 0.0;
    for step in 1..=config.max_steps {
        if step == config.max_steps / 2 {
            learner.learning_rate = config.learning_rate_final;
        }
        let action = sample_categorical(&mut rng, learner.action_probs(state).iter().copied());
        let outcome = env.step(action, &mut rng);
        episode_return += outcome.reward;
        buffer.push(Transition {
            state,
            action,
            reward: outcome.reward,
            next_state: outcome.next_state,
            done: outcome.terminal,
            origin: Origin::Source,
        });
        if buffer.len() >= config.warmup_steps {
            for _ in 0..config.updates_per_step {
                let batch = buffer.sample(config.batch_size);
                last_residual = learner.soft_q_update(&batch)?;
            }
        }
        if outcome.terminal || outcome.truncated {
            rows.push(PretrainRow {
                step: step as u64,
                episode_return,
                soft_bellman_residual: last_residual,
                entropy: learner.mean_entropy(),
            });
            episodes_done += 1;
            if config.eval_every_episodes > 0
                && episodes_done.is_multiple_of(config.eval_every_episodes)
            {
                eval_counter += 1;
                let score = evaluate_policy(
                    env,
                    &learner,
                    config.eval_episodes,
                    seed.wrapping_add(0x0e7a_1000 + eval_counter),
                );
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, learner.clone()));
                }
                if let Some(stop) = config.stop_return {
                    if score >= stop {
                        break;
                    }
                }
            }
            episode_return = 0.0;
            state = env.reset(&mut rng);
        } else {
            state = outcome.next_state;
        }
    }
    let chosen = best.map(|(_, snapshot)| snapshot).unwrap_or(learner);
    Ok((chosen, rows))
}

/// Mean return of the learner's frozen implied policy over dedicated
/// episodes on a copy of the environment.
pub fn evaluate_policy<E: Environment + Clone>(
    env: &E,
    learner: &SoftLearnerState,
    episodes: usize,
    eval_seed: u64,
) -> f64 {
    let mut eval_env = env.clone();
    let mut eval_rng = ChaCha8Rng::seed_from_u64(eval_seed);
    let mut total = 0.0;
    for _ in 0..episodes.max(1) {
        let mut s = eval_env.reset(&mut eval_rng);
        loop {
            let action = sample_categorical(&mut eval_rng, learner.action_probs(s).iter().copied());
            let outcome = eval_env.step(action, &mut eval_rng);
            total += outcome.reward;
            s = outcome.next_state;
            if outcome.terminal || outcome.truncated {
                break;
            }
        }
    }
    total / episodes.max(1) as f64
}
