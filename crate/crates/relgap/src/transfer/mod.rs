//! The three transfer algorithms over tabular MDP pairs and CartPole:
//! relative policy updates against a source-trained critic, value-weighted
//! dynamics fitting, and the closed loop combining both.

mod runner;

pub use runner::{
    cartpole_transfer_run, evaluate_cartpole_return, steps_to_reach, tabular_transfer_run,
    CartPoleAlgo, CartPoleTransferSetup, TabularAlgo, TabularTransferSetup, TransferRunResult,
    TransferTelemetryRow,
};

use ndarray::{Array1, Array2, Array3};

use crate::env::{
    cartpole_step_gradient, next_state, CartPoleParams, Discretizer, ForceDirection,
    TabularDynamicsModel,
};
use crate::error::{Error, Result};
use crate::mdp::TabularPolicy;
use crate::soft_rl::{PhysicalTransition, SoftLearnerState, Transition};

/// Knobs shared by the transfer algorithms.
#[derive(Debug, Clone, Copy)]
pub struct TransferConfig {
    /// Every f-th policy update consumes a source batch.
    pub alternate_frequency: usize,
    /// Policy updates per collected target step.
    pub policy_replay_ratio: usize,
    /// Dynamics updates per collected target step.
    pub dynamics_replay_ratio: usize,
    /// Minimum normalized dynamics weight.
    pub rto_min_weight: f64,
    pub rto_learning_rate: f64,
    /// Dynamics step size after half the target budget. Fitting one-hot
    /// samples at a constant rate stalls on its variance floor; dropping the
    /// rate lets the model settle.
    pub rto_learning_rate_final: f64,
    /// Interpolation step of the actor toward the critic's softmax.
    pub rpo_learning_rate: f64,
    pub batch_size: usize,
    pub target_step_budget: usize,
    /// Q-table updates per collected source step.
    pub q_updates_per_source_step: usize,
}

impl TransferConfig {
    pub fn tabular_default() -> Self {
        Self {
            alternate_frequency: 5,
            policy_replay_ratio: 1,
            dynamics_replay_ratio: 1,
            rto_min_weight: 0.5,
            rto_learning_rate: 0.1,
            rto_learning_rate_final: 0.01,
            rpo_learning_rate: 0.5,
            batch_size: 64,
            target_step_budget: 20_000,
            q_updates_per_source_step: 1,
        }
    }

    pub fn cartpole_default() -> Self {
        Self {
            rto_learning_rate: 1e-2,
            rto_learning_rate_final: 1e-2,
            target_step_budget: 60_000,
            ..Self::tabular_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alternate_frequency < 1 {
            return Err(Error::InvalidValue(
                "alternate_frequency must be >= 1".into(),
            ));
        }
        if self.policy_replay_ratio < 1 || self.dynamics_replay_ratio < 1 {
            return Err(Error::InvalidValue("replay ratios must be >= 1".into()));
        }
        if !self.rto_min_weight.is_finite() || self.rto_min_weight <= 0.0 {
            return Err(Error::InvalidValue(
                "rto_min_weight must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidValue("batch_size must be positive".into()));
        }
        if self.target_step_budget == 0 {
            return Err(Error::InvalidValue(
                "target step budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A raw dynamics weight and its min-max normalization over the batch it
/// came from.
#[derive(Debug, Clone, Copy)]
pub struct RtoWeight {
    pub raw: f64,
    pub normalized: f64,
}

/// Min-max normalization shifted by the minimum weight:
/// `w_hat = (w - w_min) / (w_max - w_min) + eps`, spanning exactly
/// `[eps, 1 + eps]`; a degenerate snapshot collapses to `eps` uniformly.
pub fn normalize_weights(raw: &[f64], min_weight: f64) -> Vec<RtoWeight> {
    let w_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let w_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = w_max - w_min;
    // A span at round-off scale is a constant snapshot; rescaling it would
    // amplify noise into the full weight range.
    let degenerate = span.is_nan() || span <= 1e-12 * w_max.abs().max(1.0);
    raw.iter()
        .map(|&w| RtoWeight {
            raw: w,
            normalized: if degenerate {
                min_weight
            } else {
                (w - w_min) / span + min_weight
            },
        })
        .collect()
}

/// Explicit actor table the relative policy update maintains, decoupled from
/// the critic so the critic can keep training on source data only.
#[derive(Debug, Clone)]
pub struct RpoActor {
    probs: Array2<f64>,
    update_count: u64,
    source_batch_uses: u64,
}

const ACTOR_FLOOR: f64 = 1e-12;

impl RpoActor {
    pub fn from_policy(pi: &TabularPolicy) -> Self {
        Self {
            probs: pi.probs().clone(),
            update_count: 0,
            source_batch_uses: 0,
        }
    }

    pub fn policy(&self) -> TabularPolicy {
        TabularPolicy::new(self.probs.clone()).expect("actor rows stay stochastic")
    }

    pub fn action_probs(&self, state: usize) -> Array1<f64> {
        self.probs.row(state).to_owned()
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// How many updates consumed a source batch.
    pub fn source_batch_uses(&self) -> u64 {
        self.source_batch_uses
    }

    pub fn mean_entropy_over(&self, states: impl Iterator<Item = usize>) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in states {
            for a in 0..self.probs.ncols() {
                let p = self.probs[[s, a]];
                if p > 0.0 {
                    total -= p * p.ln();
                }
            }
            count += 1;
        }
        if count == 0 {
            0.0
        } else {
            total / count as f64
        }
    }

    /// Interpolates one row toward the critic's softmax in log space
    /// (the KL-regularized improvement step) and renormalizes.
    fn step_row(&mut self, state: usize, critic_softmax: &Array1<f64>, step: f64) {
        let na = self.probs.ncols();
        let mut logs = Array1::zeros(na);
        for a in 0..na {
            logs[a] = (1.0 - step) * self.probs[[state, a]].max(ACTOR_FLOOR).ln()
                + step * critic_softmax[a].max(ACTOR_FLOOR).ln();
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for a in 0..na {
            let e = (logs[a] - max).exp();
            self.probs[[state, a]] = e;
            sum += e;
        }
        for a in 0..na {
            self.probs[[state, a]] = (self.probs[[state, a]] / sum).max(ACTOR_FLOOR);
        }
        // Renormalize after flooring.
        let total: f64 = self.probs.row(state).sum();
        for a in 0..na {
            self.probs[[state, a]] /= total;
        }
    }
}

/// One relative policy update: the actor moves toward the source critic's
/// softmax at the states of the target batch; every f-th call consumes the
/// source batch instead so the policy keeps performing in the source
/// environment. The critic itself is never touched here.
pub fn rpo_update(
    actor: &mut RpoActor,
    learner: &SoftLearnerState,
    target_batch: &[Transition],
    source_batch: Option<&[Transition]>,
    config: &TransferConfig,
) -> Result<()> {
    if target_batch.is_empty() {
        return Err(Error::EmptyBatch("rpo_update"));
    }
    if actor.probs.dim() != learner.q_table.dim() {
        return Err(Error::DimensionMismatch(format!(
            "actor is {:?} but critic is {:?}",
            actor.probs.dim(),
            learner.q_table.dim()
        )));
    }
    actor.update_count += 1;
    let batch = match source_batch {
        Some(source)
            if actor
                .update_count
                .is_multiple_of(config.alternate_frequency as u64) =>
        {
            actor.source_batch_uses += 1;
            source
        }
        _ => target_batch,
    };
    for t in batch {
        let softmax = learner.action_probs(t.state);
        actor.step_row(t.state, &softmax, config.rpo_learning_rate);
    }
    Ok(())
}

/// Squared one-hot regression loss of the tabular model on a batch, under
/// fixed normalized weights: `sum_i w_i sum_{s'} (1[s' = s'_i] - P(s'|s_i,a_i))^2`.
pub fn rto_tabular_loss(
    model: &TabularDynamicsModel,
    batch: &[Transition],
    weights: &[f64],
) -> f64 {
    let n_next = model.logits().dim().2;
    let mut loss = 0.0;
    for (t, &w) in batch.iter().zip(weights) {
        let row = model.transition_row(t.state, t.action);
        for sn in 0..n_next {
            let target = if sn == t.next_state { 1.0 } else { 0.0 };
            loss += w * (target - row[sn]) * (target - row[sn]);
        }
    }
    loss
}

/// Analytic gradient of [`rto_tabular_loss`] with respect to the logits.
pub fn rto_tabular_gradient(
    model: &TabularDynamicsModel,
    batch: &[Transition],
    weights: &[f64],
) -> Array3<f64> {
    let dims = model.logits().dim();
    let mut grad = Array3::zeros(dims);
    for (t, &w) in batch.iter().zip(weights) {
        let row = model.transition_row(t.state, t.action);
        // residual_j = P_j - target_j; through the softmax:
        // dL/dz_k = 2 w P_k (residual_k - sum_j residual_j P_j)
        let mut inner = 0.0;
        for sn in 0..dims.2 {
            let target = if sn == t.next_state { 1.0 } else { 0.0 };
            inner += (row[sn] - target) * row[sn];
        }
        for sn in 0..dims.2 {
            let target = if sn == t.next_state { 1.0 } else { 0.0 };
            grad[[t.state, t.action, sn]] += 2.0 * w * row[sn] * ((row[sn] - target) - inner);
        }
    }
    grad
}

/// Squared one-step soft lookahead of each batch pair under the snapshot
/// model: `w_i = (sum_{s'} P_snap(s'|s_i,a_i) (r(s_i,a_i,s') + gamma v(s')))^2`.
///
/// The weight must be a function of the pair `(s, a)` alone: a weight read
/// at the observed next state correlates with the one-hot regression target
/// and shifts its minimizer off the true dynamics.
pub fn rto_raw_weights_tabular(
    model_snapshot: &TabularDynamicsModel,
    reward: &Array3<f64>,
    batch: &[Transition],
    v_soft_snapshot: &Array1<f64>,
    gamma: f64,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            let row = model_snapshot.transition_row(t.state, t.action);
            let mut lookahead = 0.0;
            for (sn, &p) in row.iter().enumerate() {
                lookahead += p * (reward[[t.state, t.action, sn]] + gamma * v_soft_snapshot[sn]);
            }
            lookahead * lookahead
        })
        .collect()
}

/// Physical counterpart of [`rto_raw_weights_tabular`]: the deterministic
/// model's prediction stands in for the snapshot expectation.
pub fn rto_raw_weights_physical(
    params_snapshot: &CartPoleParams,
    batch: &[PhysicalTransition],
    v_soft: &Array1<f64>,
    discretizer: &Discretizer,
    gamma: f64,
) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            let predicted = next_state(
                params_snapshot,
                &t.state,
                ForceDirection::from_action(t.indexed.action),
            );
            let bootstrap = if t.indexed.done {
                0.0
            } else {
                v_soft[discretizer.index(&predicted)]
            };
            let w = t.indexed.reward + gamma * bootstrap;
            w * w
        })
        .collect()
}

/// One relative transition update of the tabular model: weights from the
/// snapshot soft values, one analytic gradient step on the weighted one-hot
/// regression. Returns the batch loss before the step.
pub fn rto_update_tabular(
    model: &mut TabularDynamicsModel,
    batch: &[Transition],
    reward: &Array3<f64>,
    v_soft_snapshot: &Array1<f64>,
    gamma: f64,
    config: &TransferConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("rto_update_tabular"));
    }
    let raw = rto_raw_weights_tabular(model, reward, batch, v_soft_snapshot, gamma);
    let weights: Vec<f64> = normalize_weights(&raw, config.rto_min_weight)
        .iter()
        .map(|w| w.normalized)
        .collect();
    let loss = rto_tabular_loss(model, batch, &weights);
    let grad = rto_tabular_gradient(model, batch, &weights);
    model
        .logits_mut()
        .zip_mut_with(&grad, |z, &g| *z -= config.rto_learning_rate * g);
    Ok(loss)
}

/// Weighted squared-error loss of the deterministic physical model on a
/// batch of real transitions: `mean_i w_i ||s'_i - f_phi(s_i, a_i)||^2`.
pub fn rto_physical_loss(
    params: &CartPoleParams,
    batch: &[PhysicalTransition],
    weights: &[f64],
) -> f64 {
    let mut loss = 0.0;
    for (t, &w) in batch.iter().zip(weights) {
        let predicted = next_state(
            params,
            &t.state,
            ForceDirection::from_action(t.indexed.action),
        );
        let p = predicted.as_array();
        let o = t.next_state.as_array();
        let mut err = 0.0;
        for i in 0..4 {
            err += (o[i] - p[i]) * (o[i] - p[i]);
        }
        loss += w * err;
    }
    loss / batch.len() as f64
}

/// One relative transition update of the pole length: weights from the
/// discretized value table, chain rule through the squared error with the
/// finite-difference state gradient, gradient clipped to unit magnitude and
/// the length projected to stay positive. Returns the new parameters and
/// the batch loss before the step.
pub fn rto_update_physical(
    params: &CartPoleParams,
    batch: &[PhysicalTransition],
    v_soft: &Array1<f64>,
    discretizer: &Discretizer,
    gamma: f64,
    config: &TransferConfig,
) -> Result<(CartPoleParams, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("rto_update_physical"));
    }
    let raw = rto_raw_weights_physical(params, batch, v_soft, discretizer, gamma);
    let weights: Vec<f64> = normalize_weights(&raw, config.rto_min_weight)
        .iter()
        .map(|w| w.normalized)
        .collect();
    let loss = rto_physical_loss(params, batch, &weights);
    let mut grad = 0.0;
    for (t, &w) in batch.iter().zip(&weights) {
        let action = ForceDirection::from_action(t.indexed.action);
        let predicted = next_state(params, &t.state, action);
        let d_next = cartpole_step_gradient(params, &t.state, action);
        let p = predicted.as_array();
        let o = t.next_state.as_array();
        for i in 0..4 {
            grad += w * 2.0 * (p[i] - o[i]) * d_next[i];
        }
    }
    grad /= batch.len() as f64;
    let clipped = grad.clamp(-1.0, 1.0);
    let new_length = (params.pole_length - config.rto_learning_rate * clipped).max(1e-3);
    Ok((params.with_pole_length(new_length), loss))
}

#[cfg(test)]
mod tests;
