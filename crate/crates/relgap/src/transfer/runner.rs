//! Closed-loop transfer runs: interleaved source/target collection, critic
//! updates on source data, relative policy updates at target states and
//! dynamics updates from target transitions, with per-iteration telemetry.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{CartPoleEnv, CartPoleParams, Discretizer, TabularDynamicsModel, TabularEnv};
use crate::error::Result;
use crate::mdp::{TabularMdp, TabularPolicy};
use crate::relativity::tv_divergence_dynamics;
use crate::soft_rl::{
    collect_cartpole_episode, collect_episode_with, Origin, PhysicalTransition, ReplayBuffer,
    SoftLearnerState, Transition,
};
use crate::transfer::{
    rpo_update, rto_update_physical, rto_update_tabular, RpoActor, TransferConfig,
};

/// One telemetry row per loop iteration (one source plus one target episode).
#[derive(Debug, Clone, Copy)]
pub struct TransferTelemetryRow {
    pub target_steps: u64,
    pub source_steps: u64,
    pub target_return: f64,
    pub source_return: f64,
    /// Current pole length on the physical path, max-TV between the model
    /// and the target dynamics on the tabular path.
    pub model_gap: f64,
    pub rto_loss: f64,
    pub rpo_entropy: f64,
}

/// Final state of a transfer run next to its telemetry.
#[derive(Debug, Clone)]
pub struct TransferRunResult {
    pub rows: Vec<TransferTelemetryRow>,
    pub learner: SoftLearnerState,
    /// The behavior policy at the end of the run.
    pub policy: TabularPolicy,
    pub final_pole_length: Option<f64>,
    pub final_model_tv: Option<f64>,
    /// The learned dynamics with the shared rewards, on the tabular path.
    pub final_model: Option<TabularMdp>,
    pub rpo_updates: u64,
    pub rto_updates: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CartPoleAlgo {
    /// Warm-started SAC: target interaction only, critic trained on target data.
    SacWarm,
    /// Relative policy updates against the fixed-length source model.
    Rpo,
    /// Dynamics fitting only; the pretrained policy is frozen.
    Rto,
    /// The closed loop combining both update families.
    Rpto,
}

impl CartPoleAlgo {
    fn uses_source(self) -> bool {
        self != CartPoleAlgo::SacWarm
    }

    fn updates_policy(self) -> bool {
        matches!(self, CartPoleAlgo::Rpo | CartPoleAlgo::Rpto)
    }

    fn updates_dynamics(self) -> bool {
        matches!(self, CartPoleAlgo::Rto | CartPoleAlgo::Rpto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabularAlgo {
    Rpo,
    Rto,
    Rpto,
}

impl TabularAlgo {
    fn updates_policy(self) -> bool {
        matches!(self, TabularAlgo::Rpo | TabularAlgo::Rpto)
    }

    fn updates_dynamics(self) -> bool {
        matches!(self, TabularAlgo::Rto | TabularAlgo::Rpto)
    }
}

/// Inputs of a CartPole transfer run. Source and target parameters differ
/// only in pole length; the pretrained learner converged in the source.
#[derive(Debug, Clone)]
pub struct CartPoleTransferSetup {
    pub source_params: CartPoleParams,
    pub target_params: CartPoleParams,
    pub discretizer: Discretizer,
    pub pretrained: SoftLearnerState,
}

/// Runs one CartPole transfer with the given algorithm. Deterministic for a
/// fixed seed and setup.
pub fn cartpole_transfer_run(
    setup: &CartPoleTransferSetup,
    algo: CartPoleAlgo,
    seed: u64,
    config: &TransferConfig,
) -> Result<TransferRunResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut learner = setup.pretrained.clone();
    let frozen_policy = setup.pretrained.implied_policy();
    let mut actor = RpoActor::from_policy(&frozen_policy);
    let mut model_params = setup.source_params;
    let mut model_env = CartPoleEnv::new(model_params, setup.discretizer.clone())?;
    let mut target_env = CartPoleEnv::new(setup.target_params, setup.discretizer.clone())?;
    let mut d_source: ReplayBuffer<PhysicalTransition> =
        ReplayBuffer::new(100_000, seed.wrapping_add(1));
    let mut d_target: ReplayBuffer<PhysicalTransition> =
        ReplayBuffer::new(100_000, seed.wrapping_add(2));

    let mut rows = Vec::new();
    let mut target_steps = 0u64;
    let mut source_steps = 0u64;
    let mut last_rto_loss = 0.0;
    let mut rto_updates = 0u64;

    while (target_steps as usize) < config.target_step_budget {
        // Behavior policy: the actor when the algorithm updates one, the
        // critic's softmax for warm-started SAC, the frozen pretrained
        // policy for pure dynamics fitting.
        let mut source_return = 0.0;
        if algo.uses_source() {
            let stats = {
                let probs = |s: usize| match algo {
                    CartPoleAlgo::Rto => frozen_policy.probs().row(s).to_owned(),
                    _ => actor.action_probs(s),
                };
                collect_cartpole_episode(
                    &mut model_env,
                    probs,
                    &mut rng,
                    &mut d_source,
                    Origin::Source,
                )
            };
            source_steps += stats.steps as u64;
            source_return = stats.episode_return;

            let q_updates = stats.steps * config.q_updates_per_source_step;
            for _ in 0..q_updates {
                let batch: Vec<Transition> = d_source
                    .sample(config.batch_size)
                    .iter()
                    .map(|t| t.indexed)
                    .collect();
                learner.soft_q_update(&batch)?;
            }
        }

        let target_stats = {
            let probs = |s: usize| match algo {
                CartPoleAlgo::SacWarm => learner.action_probs(s),
                CartPoleAlgo::Rto => frozen_policy.probs().row(s).to_owned(),
                _ => actor.action_probs(s),
            };
            collect_cartpole_episode(
                &mut target_env,
                probs,
                &mut rng,
                &mut d_target,
                Origin::Target,
            )
        };
        target_steps += target_stats.steps as u64;

        if algo == CartPoleAlgo::SacWarm {
            let updates = target_stats.steps * config.policy_replay_ratio;
            for _ in 0..updates {
                let batch: Vec<Transition> = d_target
                    .sample(config.batch_size)
                    .iter()
                    .map(|t| t.indexed)
                    .collect();
                learner.soft_q_update(&batch)?;
            }
        }

        if algo.updates_policy() {
            let updates = target_stats.steps * config.policy_replay_ratio;
            for _ in 0..updates {
                let target_batch: Vec<Transition> = d_target
                    .sample(config.batch_size)
                    .iter()
                    .map(|t| t.indexed)
                    .collect();
                let source_batch: Vec<Transition> = d_source
                    .sample(config.batch_size)
                    .iter()
                    .map(|t| t.indexed)
                    .collect();
                rpo_update(
                    &mut actor,
                    &learner,
                    &target_batch,
                    Some(&source_batch),
                    config,
                )?;
            }
        }

        if algo.updates_dynamics() {
            // The value table only depends on the learner, which is frozen
            // within this block, so one snapshot serves every update.
            let v_soft = learner.soft_state_values();
            let phase_config = rto_phase_config(config, target_steps);
            let updates = target_stats.steps * config.dynamics_replay_ratio;
            for _ in 0..updates {
                let batch = d_target.sample(config.batch_size);
                let (new_params, loss) = rto_update_physical(
                    &model_params,
                    &batch,
                    &v_soft,
                    &setup.discretizer,
                    learner.discount(),
                    &phase_config,
                )?;
                model_params = new_params;
                last_rto_loss = loss;
                rto_updates += 1;
            }
            model_env.set_pole_length(model_params.pole_length);
        }

        let entropy_states = d_target
            .iter()
            .rev()
            .take(target_stats.steps)
            .map(|t| t.indexed.state);
        let rpo_entropy = match algo {
            CartPoleAlgo::SacWarm => learner.implied_policy().entropy().mean().unwrap_or(0.0),
            _ => actor.mean_entropy_over(entropy_states),
        };
        rows.push(TransferTelemetryRow {
            target_steps,
            source_steps,
            target_return: target_stats.episode_return,
            source_return,
            model_gap: model_params.pole_length,
            rto_loss: last_rto_loss,
            rpo_entropy,
        });
    }

    let policy = match algo {
        CartPoleAlgo::SacWarm => learner.implied_policy(),
        CartPoleAlgo::Rto => frozen_policy,
        _ => actor.policy(),
    };
    Ok(TransferRunResult {
        rows,
        rpo_updates: actor.update_count(),
        rto_updates,
        learner,
        policy,
        final_pole_length: Some(model_params.pole_length),
        final_model_tv: None,
        final_model: None,
    })
}

/// Inputs of a tabular transfer run: the source/target MDP pair (shared
/// rewards, initial distribution and discount) and a learner pretrained in
/// the source.
#[derive(Debug, Clone)]
pub struct TabularTransferSetup {
    pub source: TabularMdp,
    pub target: TabularMdp,
    pub pretrained: SoftLearnerState,
    pub episode_len: usize,
}

/// Runs one tabular transfer. The source of interaction is the learned
/// model, so the policy sees the model drift toward the target as the
/// dynamics updates accumulate.
pub fn tabular_transfer_run(
    setup: &TabularTransferSetup,
    algo: TabularAlgo,
    seed: u64,
    config: &TransferConfig,
) -> Result<TransferRunResult> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut learner = setup.pretrained.clone();
    let frozen_policy = setup.pretrained.implied_policy();
    let mut actor = RpoActor::from_policy(&frozen_policy);
    let mut model = TabularDynamicsModel::from_transition(setup.source.transition());
    let mut model_mdp = setup.source.with_transition(model.transition())?;
    let mut model_env = TabularEnv::new(model_mdp.clone(), setup.episode_len);
    let mut target_env = TabularEnv::new(setup.target.clone(), setup.episode_len);
    let mut d_source: ReplayBuffer<Transition> = ReplayBuffer::new(100_000, seed.wrapping_add(1));
    let mut d_target: ReplayBuffer<Transition> = ReplayBuffer::new(100_000, seed.wrapping_add(2));

    let mut rows = Vec::new();
    let mut target_steps = 0u64;
    let mut source_steps = 0u64;
    let mut last_rto_loss = 0.0;
    let mut rto_updates = 0u64;

    while (target_steps as usize) < config.target_step_budget {
        let source_stats = {
            let probs = |s: usize| match algo {
                TabularAlgo::Rto => frozen_policy.probs().row(s).to_owned(),
                _ => actor.action_probs(s),
            };
            collect_episode_with(
                &mut model_env,
                probs,
                &mut rng,
                &mut d_source,
                Origin::Source,
            )
        };
        source_steps += source_stats.steps as u64;
        for _ in 0..source_stats.steps * config.q_updates_per_source_step {
            let batch = d_source.sample(config.batch_size);
            learner.soft_q_update(&batch)?;
        }

        let target_stats = {
            let probs = |s: usize| match algo {
                TabularAlgo::Rto => frozen_policy.probs().row(s).to_owned(),
                _ => actor.action_probs(s),
            };
            collect_episode_with(
                &mut target_env,
                probs,
                &mut rng,
                &mut d_target,
                Origin::Target,
            )
        };
        target_steps += target_stats.steps as u64;

        if algo.updates_policy() {
            for _ in 0..target_stats.steps * config.policy_replay_ratio {
                let target_batch = d_target.sample(config.batch_size);
                let source_batch = d_source.sample(config.batch_size);
                rpo_update(
                    &mut actor,
                    &learner,
                    &target_batch,
                    Some(&source_batch),
                    config,
                )?;
            }
        }

        if algo.updates_dynamics() {
            let behavior = match algo {
                TabularAlgo::Rto => frozen_policy.clone(),
                _ => actor.policy(),
            };
            let phase_config = rto_phase_config(config, target_steps);
            for _ in 0..target_stats.steps * config.dynamics_replay_ratio {
                // Exact soft values of the model as it stood before this
                // update: the per-update snapshot.
                let v_soft = model_mdp
                    .soft_policy_evaluation(&behavior, learner.temperature)?
                    .v_soft;
                let batch = d_target.sample(config.batch_size);
                last_rto_loss = rto_update_tabular(
                    &mut model,
                    &batch,
                    setup.source.reward(),
                    &v_soft,
                    learner.discount(),
                    &phase_config,
                )?;
                model_mdp = setup.source.with_transition(model.transition())?;
                rto_updates += 1;
            }
            model_env.set_mdp(model_mdp.clone());
        }

        // Exact evaluations: the tabular path's telemetry reports the true
        // expected returns of the current behavior policy in both the true
        // source and the target, not sampled episode returns.
        let policy_now = match algo {
            TabularAlgo::Rto => frozen_policy.clone(),
            _ => actor.policy(),
        };
        let target_return = setup.target.policy_evaluation(&policy_now)?.j;
        let source_return = setup.source.policy_evaluation(&policy_now)?.j;
        let model_gap = tv_divergence_dynamics(&model_mdp, &setup.target)?;
        let entropy_states = d_target
            .iter()
            .rev()
            .take(target_stats.steps)
            .map(|t| t.state);
        rows.push(TransferTelemetryRow {
            target_steps,
            source_steps,
            target_return,
            source_return,
            model_gap,
            rto_loss: last_rto_loss,
            rpo_entropy: actor.mean_entropy_over(entropy_states),
        });
    }

    let final_model_tv = tv_divergence_dynamics(&model_mdp, &setup.target)?;
    let policy = match algo {
        TabularAlgo::Rto => frozen_policy,
        _ => actor.policy(),
    };
    Ok(TransferRunResult {
        rows,
        rpo_updates: actor.update_count(),
        rto_updates,
        learner,
        policy,
        final_pole_length: None,
        final_model_tv: Some(final_model_tv),
        final_model: Some(model_mdp),
    })
}

/// Dynamics learning rate steps down once half the target budget is spent.
fn rto_phase_config(config: &TransferConfig, target_steps: u64) -> TransferConfig {
    if target_steps as usize >= config.target_step_budget / 2 {
        TransferConfig {
            rto_learning_rate: config.rto_learning_rate_final,
            ..*config
        }
    } else {
        *config
    }
}

/// First target-step count at which the trailing-`window` mean of episode
/// returns reaches `threshold`; `None` if the run never gets there.
pub fn steps_to_reach(rows: &[TransferTelemetryRow], threshold: f64, window: usize) -> Option<u64> {
    let mut sum = 0.0;
    for (i, row) in rows.iter().enumerate() {
        sum += row.target_return;
        if i >= window {
            sum -= rows[i - window].target_return;
        }
        let count = (i + 1).min(window);
        if i + 1 >= window && sum / count as f64 >= threshold {
            return Some(row.target_steps);
        }
    }
    None
}

/// Mean return of `episodes` CartPole episodes under a fixed policy.
pub fn evaluate_cartpole_return(
    params: &CartPoleParams,
    discretizer: &Discretizer,
    policy: &TabularPolicy,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let mut env = CartPoleEnv::new(*params, discretizer.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scratch: ReplayBuffer<PhysicalTransition> = ReplayBuffer::new(1, 0);
    let mut total = 0.0;
    for _ in 0..episodes {
        let stats = collect_cartpole_episode(
            &mut env,
            |s| policy.probs().row(s).to_owned(),
            &mut rng,
            &mut scratch,
            Origin::Target,
        );
        total += stats.episode_return;
    }
    Ok(total / episodes as f64)
}
