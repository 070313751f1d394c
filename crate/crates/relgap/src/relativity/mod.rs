//! Exact return-gap decomposition between two MDPs under two policies,
//! the one-sided surrogate objectives, the divergence-based gap constants,
//! and numerical verifiers for each bound.
//!
//! Every expectation is evaluated exactly through discounted occupancies and
//! direct linear solves, so the identities hold to floating-point precision
//! and the bounds can be checked without sampling noise.

pub mod instances;

pub use instances::{InstanceRanges, RandomInstance};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

/// Bound checks absorb this much floating-point round-off in exactly-tight
/// degenerate cases.
pub const SLACK_TOL: f64 = 1e-9;

/// Tolerance of the decomposition identity between the summed gap and the
/// directly evaluated return difference.
pub const GAP_IDENTITY_TOL: f64 = 1e-8;

/// The return difference `J(P', pi) - J(P, pi')` split into its
/// dynamics-induced and policy-induced parts, next to the same quantity
/// computed directly from two policy evaluations.
#[derive(Debug, Clone)]
pub struct GapReport {
    pub total_gap: f64,
    pub dynamics_induced: f64,
    pub policy_induced: f64,
    pub direct_total: f64,
}

impl GapReport {
    pub fn identity_error(&self) -> f64 {
        (self.total_gap - self.direct_total).abs()
    }
}

/// Divergences and the closed-form gap constants derived from them.
///
/// `c3` is the two-dynamics instantiation where the model-snapshot divergence
/// coincides with `delta1`; the three-dynamics verifier computes its constant
/// from the actual snapshot divergence via [`dynamics_surrogate_constant`].
/// `c3_policy_divergence` carries the policy-divergence variant for telemetry.
#[derive(Debug, Clone)]
pub struct BoundConstants {
    pub delta1: f64,
    pub delta2: f64,
    pub eps_adv: f64,
    pub r_max: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c3_policy_divergence: f64,
}

/// Outcome of one bound check on one seeded instance.
///
/// `slack` is `lhs - rhs` for lower bounds and `rhs - lhs` for upper bounds,
/// so `holds` is always `slack >= -SLACK_TOL`.
#[derive(Debug, Clone)]
pub struct BoundCheckReport {
    pub instance_id: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub holds: bool,
}

impl BoundCheckReport {
    fn from_slack(instance_id: u64, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            instance_id,
            lhs,
            rhs,
            slack,
            holds: slack >= -SLACK_TOL,
        }
    }
}

fn check_compatible(p_prime: &TabularMdp, p: &TabularMdp) -> Result<()> {
    if p_prime.n_states() != p.n_states() || p_prime.n_actions() != p.n_actions() {
        return Err(Error::DimensionMismatch(format!(
            "dynamics are {}x{} vs {}x{}",
            p_prime.n_states(),
            p_prime.n_actions(),
            p.n_states(),
            p.n_actions()
        )));
    }
    if p_prime.reward() != p.reward() {
        return Err(Error::InvalidValue(
            "the two MDPs must share the reward tensor".into(),
        ));
    }
    if p_prime.initial_dist() != p.initial_dist() {
        return Err(Error::InvalidValue(
            "the two MDPs must share the initial distribution".into(),
        ));
    }
    if p_prime.discount() != p.discount() {
        return Err(Error::InvalidValue(
            "the two MDPs must share the discount".into(),
        ));
    }
    Ok(())
}

/// Decomposes `J(P', pi) - J(P, pi')` into the dynamics-induced gap (one-step
/// lookahead mismatch of `(V, Q)` under `(P, pi)` along the occupancy of
/// `(P', pi)`) and the policy-induced gap (advantage of `pi'` under `P`
/// along the occupancy of `(P, pi)`), and also evaluates the difference
/// directly from two policy evaluations.
pub fn relativity_gap(
    p_prime: &TabularMdp,
    pi: &TabularPolicy,
    p: &TabularMdp,
    pi_prime: &TabularPolicy,
) -> Result<GapReport> {
    check_compatible(p_prime, p)?;
    let n = p.n_states();
    let na = p.n_actions();
    let gamma = p.discount();

    let vb_p_pi = p.policy_evaluation(pi)?;
    let occ_prime = p_prime.discounted_occupancy(pi, 1e-14)?;
    let mut dynamics_induced = 0.0;
    for s in 0..n {
        for a in 0..na {
            let w = occ_prime.d_state_action[[s, a]];
            if w == 0.0 {
                continue;
            }
            let mut lookahead = -vb_p_pi.q[[s, a]];
            for sn in 0..n {
                lookahead += p_prime.transition()[[s, a, sn]]
                    * (p.reward()[[s, a, sn]] + gamma * vb_p_pi.v[sn]);
            }
            dynamics_induced += w * lookahead;
        }
    }
    dynamics_induced /= 1.0 - gamma;

    let vb_p_pi_prime = p.policy_evaluation(pi_prime)?;
    let occ_p = p.discounted_occupancy(pi, 1e-14)?;
    let mut policy_induced = 0.0;
    for s in 0..n {
        for a in 0..na {
            policy_induced +=
                occ_p.d_state[s] * pi.probs()[[s, a]] * vb_p_pi_prime.advantage[[s, a]];
        }
    }
    policy_induced /= 1.0 - gamma;

    let direct_total = p_prime.policy_evaluation(pi)?.j - vb_p_pi_prime.j;
    Ok(GapReport {
        total_gap: dynamics_induced + policy_induced,
        dynamics_induced,
        policy_induced,
        direct_total,
    })
}

/// Max-over-(s, a) total variation divergence between two transition tensors.
pub fn tv_divergence_dynamics(p_prime: &TabularMdp, p: &TabularMdp) -> Result<f64> {
    if p_prime.n_states() != p.n_states() || p_prime.n_actions() != p.n_actions() {
        return Err(Error::DimensionMismatch("dynamics shapes differ".into()));
    }
    let mut max = 0.0f64;
    for s in 0..p.n_states() {
        for a in 0..p.n_actions() {
            let mut half_l1 = 0.0;
            for sn in 0..p.n_states() {
                half_l1 += (p_prime.transition()[[s, a, sn]] - p.transition()[[s, a, sn]]).abs();
            }
            max = max.max(0.5 * half_l1);
        }
    }
    Ok(max)
}

/// Max-over-state total variation divergence between two policies.
pub fn tv_divergence_policy(pi_prime: &TabularPolicy, pi: &TabularPolicy) -> Result<f64> {
    if pi_prime.n_states() != pi.n_states() || pi_prime.n_actions() != pi.n_actions() {
        return Err(Error::DimensionMismatch("policy shapes differ".into()));
    }
    let mut max = 0.0f64;
    for s in 0..pi.n_states() {
        let mut half_l1 = 0.0;
        for a in 0..pi.n_actions() {
            half_l1 += (pi_prime.probs()[[s, a]] - pi.probs()[[s, a]]).abs();
        }
        max = max.max(0.5 * half_l1);
    }
    Ok(max)
}

/// The policy-side surrogate `L_{pi'}(pi)`: state marginals from `(P', pi')`,
/// actions from `pi`, next states from `P'`, values evaluated under `(P, pi')`.
pub fn surrogate_policy(
    p_prime: &TabularMdp,
    p: &TabularMdp,
    pi: &TabularPolicy,
    pi_prime: &TabularPolicy,
) -> Result<f64> {
    check_compatible(p_prime, p)?;
    let n = p.n_states();
    let na = p.n_actions();
    let gamma = p.discount();
    let vb = p.policy_evaluation(pi_prime)?;
    let occ = p_prime.discounted_occupancy(pi_prime, 1e-14)?;
    let mut total = 0.0;
    for s in 0..n {
        if occ.d_state[s] == 0.0 {
            continue;
        }
        for a in 0..na {
            let w = occ.d_state[s] * pi.probs()[[s, a]];
            if w == 0.0 {
                continue;
            }
            let mut lookahead = -vb.q[[s, a]];
            for sn in 0..n {
                lookahead +=
                    p_prime.transition()[[s, a, sn]] * (p.reward()[[s, a, sn]] + gamma * vb.v[sn]);
            }
            total += w * lookahead;
        }
    }
    Ok(total / (1.0 - gamma))
}

/// The dynamics-side surrogate `L_{phi'}(phi)`: occupancy from `(P', pi)`,
/// next-state lookaheads under `P'` versus `P_phi`, both scored with values
/// of the snapshot model `(P_phi', pi)`.
pub fn surrogate_dynamics(
    p_prime: &TabularMdp,
    p_phi: &TabularMdp,
    p_phi_old: &TabularMdp,
    pi: &TabularPolicy,
) -> Result<f64> {
    check_compatible(p_prime, p_phi)?;
    check_compatible(p_prime, p_phi_old)?;
    let n = p_prime.n_states();
    let na = p_prime.n_actions();
    let gamma = p_prime.discount();
    let vb_old = p_phi_old.policy_evaluation(pi)?;
    let occ = p_prime.discounted_occupancy(pi, 1e-14)?;
    let mut total = 0.0;
    for s in 0..n {
        for a in 0..na {
            let w = occ.d_state_action[[s, a]];
            if w == 0.0 {
                continue;
            }
            let mut diff = 0.0;
            for sn in 0..n {
                let payoff = p_prime.reward()[[s, a, sn]] + gamma * vb_old.v[sn];
                diff +=
                    (p_prime.transition()[[s, a, sn]] - p_phi.transition()[[s, a, sn]]) * payoff;
            }
            total += w * diff;
        }
    }
    Ok(total / (1.0 - gamma))
}

fn c1_closed_form(gamma: f64, r_max: f64, delta1: f64, delta2: f64) -> f64 {
    4.0 * gamma * r_max * delta1 / (1.0 - gamma).powi(2)
        * f64::min(
            delta2 * (gamma * gamma + 2.0) / (1.0 - gamma),
            1.0 + delta2 / (1.0 - gamma),
        )
}

fn c2_closed_form(gamma: f64, r_max: f64, eps_adv: f64, delta1: f64, delta2: f64) -> f64 {
    2.0 * gamma * eps_adv * (delta1 + 2.0 * delta2 * delta2) / (1.0 - gamma).powi(2)
        + 4.0 * gamma * r_max / (1.0 - gamma).powi(2)
            * f64::min(
                delta2 * (gamma * gamma + 2.0) / (1.0 - gamma),
                1.0 + delta2 / (1.0 - gamma),
            )
}

fn c3_closed_form(gamma: f64, r_max: f64, delta_lead: f64, delta_min_slot: f64) -> f64 {
    4.0 * gamma * delta_lead * r_max / (1.0 - gamma).powi(2)
        * f64::min(delta_min_slot * (gamma * gamma + 1.0) / (1.0 - gamma), 1.0)
}

/// Gap constant for the dynamics-side surrogate with an explicit snapshot
/// model: the leading divergence is between the target dynamics and the
/// current model, the one inside the min between the model and its snapshot.
pub fn dynamics_surrogate_constant(
    p_prime: &TabularMdp,
    p_phi: &TabularMdp,
    p_phi_old: &TabularMdp,
) -> Result<f64> {
    let delta_target = tv_divergence_dynamics(p_prime, p_phi)?;
    let delta_snapshot = tv_divergence_dynamics(p_phi, p_phi_old)?;
    Ok(c3_closed_form(
        p_prime.discount(),
        p_prime.r_max(),
        delta_target,
        delta_snapshot,
    ))
}

/// Divergences and the closed-form constants for a two-dynamics,
/// two-policies instance.
pub fn bound_constants(
    p_prime: &TabularMdp,
    p: &TabularMdp,
    pi: &TabularPolicy,
    pi_prime: &TabularPolicy,
) -> Result<BoundConstants> {
    check_compatible(p_prime, p)?;
    let gamma = p.discount();
    let r_max = p.r_max();
    let delta1 = tv_divergence_dynamics(p_prime, p)?;
    let delta2 = tv_divergence_policy(pi_prime, pi)?;
    let eps_adv = p.policy_evaluation(pi)?.max_abs_advantage();
    Ok(BoundConstants {
        delta1,
        delta2,
        eps_adv,
        r_max,
        c1: c1_closed_form(gamma, r_max, delta1, delta2),
        c2: c2_closed_form(gamma, r_max, eps_adv, delta1, delta2),
        c3: c3_closed_form(gamma, r_max, delta1, delta1),
        c3_policy_divergence: c3_closed_form(gamma, r_max, delta1, delta2),
    })
}

/// Lower bound on the dynamics-induced gap:
/// `Delta >= L_{pi'}(pi) - c1`.
pub fn verify_policy_surrogate_bound(inst: &RandomInstance) -> Result<BoundCheckReport> {
    let delta = inst.p_prime.policy_evaluation(&inst.pi)?.j - inst.p.policy_evaluation(&inst.pi)?.j;
    let surrogate = surrogate_policy(&inst.p_prime, &inst.p, &inst.pi, &inst.pi_prime)?;
    let constants = bound_constants(&inst.p_prime, &inst.p, &inst.pi, &inst.pi_prime)?;
    let rhs = surrogate - constants.c1;
    Ok(BoundCheckReport::from_slack(
        inst.seed,
        delta,
        rhs,
        delta - rhs,
    ))
}

/// Lower bound on the entire relativity gap through the importance-weighted
/// one-step objective: `J(P',pi) - J(P,pi') >= E[(pi/pi')(r + gamma V' - V)] - c2`.
pub fn verify_gap_lower_bound(inst: &RandomInstance) -> Result<BoundCheckReport> {
    let p = &inst.p;
    let p_prime = &inst.p_prime;
    let gamma = p.discount();
    let n = p.n_states();
    let na = p.n_actions();
    inst.pi_prime.require_full_support()?;

    let lhs = p_prime.policy_evaluation(&inst.pi)?.j - p.policy_evaluation(&inst.pi_prime)?.j;

    let vb_prime = p.policy_evaluation(&inst.pi_prime)?;
    let occ = p_prime.discounted_occupancy(&inst.pi_prime, 1e-14)?;
    let mut objective = 0.0;
    for s in 0..n {
        if occ.d_state[s] == 0.0 {
            continue;
        }
        for a in 0..na {
            let ratio = inst.pi.probs()[[s, a]] / inst.pi_prime.probs()[[s, a]];
            let w = occ.d_state[s] * inst.pi_prime.probs()[[s, a]] * ratio;
            if w == 0.0 {
                continue;
            }
            let mut payoff = 0.0;
            for sn in 0..n {
                payoff += p_prime.transition()[[s, a, sn]]
                    * (p.reward()[[s, a, sn]] + gamma * vb_prime.v[sn] - vb_prime.v[s]);
            }
            objective += w * payoff;
        }
    }
    objective /= 1.0 - gamma;

    let constants = bound_constants(p_prime, p, &inst.pi, &inst.pi_prime)?;
    let rhs = objective - constants.c2;
    Ok(BoundCheckReport::from_slack(inst.seed, lhs, rhs, lhs - rhs))
}

/// Upper bound on the dynamics-induced gap magnitude through the
/// snapshot-valued surrogate: `|Delta| <= |L_{phi'}(phi)| + c3`.
pub fn verify_dynamics_surrogate_bound(inst: &RandomInstance) -> Result<BoundCheckReport> {
    let delta = inst.p_prime.policy_evaluation(&inst.pi)?.j - inst.p.policy_evaluation(&inst.pi)?.j;
    let surrogate = surrogate_dynamics(&inst.p_prime, &inst.p, &inst.p_phi_old, &inst.pi)?;
    let c3 = dynamics_surrogate_constant(&inst.p_prime, &inst.p, &inst.p_phi_old)?;
    let lhs = delta.abs();
    let rhs = surrogate.abs() + c3;
    Ok(BoundCheckReport::from_slack(inst.seed, lhs, rhs, rhs - lhs))
}

/// L1 distance of time marginals grows at most linearly:
/// `sum_s |p_t^{P',pi} - p_t^{P,pi}| <= 2 t delta1` and the policy analogue
/// with `delta2`. Reports the binding check over `t <= t_max`.
pub fn verify_marginal_drift_bound(
    inst: &RandomInstance,
    t_max: usize,
) -> Result<BoundCheckReport> {
    let delta1 = tv_divergence_dynamics(&inst.p_prime, &inst.p)?;
    let delta2 = tv_divergence_policy(&inst.pi_prime, &inst.pi)?;
    let marginals_p_prime = inst.p_prime.time_marginals(&inst.pi, t_max)?;
    let marginals_p = inst.p.time_marginals(&inst.pi, t_max)?;
    let marginals_pi_prime = inst.p.time_marginals(&inst.pi_prime, t_max)?;

    let mut binding = (f64::INFINITY, 0.0, 0.0);
    for t in 0..=t_max {
        let l1_dyn: f64 = marginals_p_prime[t]
            .iter()
            .zip(marginals_p[t].iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let l1_pol: f64 = marginals_pi_prime[t]
            .iter()
            .zip(marginals_p[t].iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        for (lhs, rhs) in [
            (l1_dyn, 2.0 * t as f64 * delta1),
            (l1_pol, 2.0 * t as f64 * delta2),
        ] {
            let slack = rhs - lhs;
            if slack < binding.0 {
                binding = (slack, lhs, rhs);
            }
        }
    }
    Ok(BoundCheckReport::from_slack(
        inst.seed, binding.1, binding.2, binding.0,
    ))
}

/// Per-state value differences are bounded by the divergences:
/// `|V^{P',pi}(s) - V^{P,pi}(s)| <= min(2 r_max delta1 / (1-gamma)^2, 2 r_max / (1-gamma))`
/// and the policy analogue with `delta2`. Reports the binding state.
pub fn verify_value_difference_bound(inst: &RandomInstance) -> Result<BoundCheckReport> {
    let gamma = inst.p.discount();
    let r_max = inst.p.r_max();
    let delta1 = tv_divergence_dynamics(&inst.p_prime, &inst.p)?;
    let delta2 = tv_divergence_policy(&inst.pi_prime, &inst.pi)?;
    let cap = 2.0 * r_max / (1.0 - gamma);
    let bound_dyn = f64::min(2.0 * r_max * delta1 / (1.0 - gamma).powi(2), cap);
    let bound_pol = f64::min(2.0 * r_max * delta2 / (1.0 - gamma).powi(2), cap);

    let v_p_prime = inst.p_prime.policy_evaluation(&inst.pi)?.v;
    let v_p = inst.p.policy_evaluation(&inst.pi)?.v;
    let v_pi_prime = inst.p.policy_evaluation(&inst.pi_prime)?.v;

    let mut binding = (f64::INFINITY, 0.0, 0.0);
    for s in 0..inst.p.n_states() {
        for (lhs, rhs) in [
            ((v_p_prime[s] - v_p[s]).abs(), bound_dyn),
            ((v_pi_prime[s] - v_p[s]).abs(), bound_pol),
        ] {
            let slack = rhs - lhs;
            if slack < binding.0 {
                binding = (slack, lhs, rhs);
            }
        }
    }
    Ok(BoundCheckReport::from_slack(
        inst.seed, binding.1, binding.2, binding.0,
    ))
}

/// Decomposition identity as a check: `|total_gap - direct_total|` must stay
/// within [`GAP_IDENTITY_TOL`].
pub fn verify_gap_identity(inst: &RandomInstance) -> Result<BoundCheckReport> {
    let report = relativity_gap(&inst.p_prime, &inst.pi, &inst.p, &inst.pi_prime)?;
    let lhs = report.identity_error();
    Ok(BoundCheckReport::from_slack(
        inst.seed,
        lhs,
        GAP_IDENTITY_TOL,
        GAP_IDENTITY_TOL - lhs,
    ))
}

/// Names of the verification suites, in reporting order.
pub const SUITE_NAMES: [&str; 6] = [
    "gap_identity",
    "policy_surrogate",
    "gap_lower_bound",
    "dynamics_surrogate",
    "marginal_drift",
    "value_difference",
];

/// Runs every suite on one instance; returns `(suite_name, report)` pairs in
/// [`SUITE_NAMES`] order.
pub fn verify_instance_all(
    inst: &RandomInstance,
    t_max: usize,
) -> Result<Vec<(&'static str, BoundCheckReport)>> {
    Ok(vec![
        ("gap_identity", verify_gap_identity(inst)?),
        ("policy_surrogate", verify_policy_surrogate_bound(inst)?),
        ("gap_lower_bound", verify_gap_lower_bound(inst)?),
        ("dynamics_surrogate", verify_dynamics_surrogate_bound(inst)?),
        ("marginal_drift", verify_marginal_drift_bound(inst, t_max)?),
        ("value_difference", verify_value_difference_bound(inst)?),
    ])
}
