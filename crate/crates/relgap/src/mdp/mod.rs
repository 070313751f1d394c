//! Finite MDP representation and exact solvers.
//!
//! Infinite-horizon discounted quantities are computed by direct linear
//! solves; truncated iteration appears only in test oracles. All types are
//! immutable after construction and every operation is a pure function.

mod io;

pub use io::{parse_mdp, parse_policy, write_mdp, write_policy};

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

/// Tolerance for probability normalization at construction time.
pub const PROB_TOL: f64 = 1e-12;

fn solve_linear(
    a: nalgebra::DMatrix<f64>,
    b: nalgebra::DVector<f64>,
    what: &'static str,
) -> Result<Array1<f64>> {
    let lu = a.lu();
    match lu.solve(&b) {
        Some(x) => Ok(Array1::from_iter(x.iter().copied())),
        None => Err(Error::SingularSystem(what)),
    }
}

/// A finite MDP: transition tensor `P[s][a][s']`, reward tensor `r[s][a][s']`,
/// initial state distribution and discount in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Array3<f64>,
    reward: Array3<f64>,
    initial_dist: Array1<f64>,
    discount: f64,
    r_max: f64,
}

impl TabularMdp {
    pub fn new(
        transition: Array3<f64>,
        reward: Array3<f64>,
        initial_dist: Array1<f64>,
        discount: f64,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_states == 0 || n_actions == 0 {
            return Err(Error::DimensionMismatch(
                "empty state or action space".into(),
            ));
        }
        if n_next != n_states {
            return Err(Error::DimensionMismatch(format!(
                "transition tensor is {n_states}x{n_actions}x{n_next}, expected last dim {n_states}"
            )));
        }
        if reward.dim() != transition.dim() {
            return Err(Error::DimensionMismatch(format!(
                "reward tensor {:?} does not match transition {:?}",
                reward.dim(),
                transition.dim()
            )));
        }
        if initial_dist.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "initial distribution has {} entries, expected {n_states}",
                initial_dist.len()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidValue(format!(
                "discount must lie in [0, 1), got {discount}"
            )));
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                check_distribution_row(
                    transition.slice(ndarray::s![s, a, ..]).iter(),
                    &format!("transition row (s={s}, a={a})"),
                )?;
            }
        }
        check_distribution_row(initial_dist.iter(), "initial distribution")?;
        let mut r_max = f64::NEG_INFINITY;
        for &r in reward.iter() {
            if !r.is_finite() {
                return Err(Error::InvalidValue("non-finite reward entry".into()));
            }
            r_max = r_max.max(r);
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            initial_dist,
            discount,
            r_max,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &Array3<f64> {
        &self.reward
    }

    pub fn initial_dist(&self) -> &Array1<f64> {
        &self.initial_dist
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Largest reward over all `(s, a, s')` triples.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Replaces the transition tensor, keeping rewards, initial distribution
    /// and discount. Used to evaluate a learned dynamics model against the
    /// reward structure it shares with the real environment.
    pub fn with_transition(&self, transition: Array3<f64>) -> Result<Self> {
        Self::new(
            transition,
            self.reward.clone(),
            self.initial_dist.clone(),
            self.discount,
        )
    }

    fn check_policy(&self, pi: &TabularPolicy) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(Error::DimensionMismatch(format!(
                "policy is {}x{}, mdp is {}x{}",
                pi.n_states(),
                pi.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    /// Expected one-step reward `r(s, a) = sum_{s'} P(s'|s,a) r(s,a,s')`.
    pub fn expected_reward(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_states, self.n_actions));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut acc = 0.0;
                for sn in 0..self.n_states {
                    acc += self.transition[[s, a, sn]] * self.reward[[s, a, sn]];
                }
                out[[s, a]] = acc;
            }
        }
        out
    }

    /// State-to-state transition matrix under `pi`:
    /// `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
    pub fn policy_transition(&self, pi: &TabularPolicy) -> Array2<f64> {
        let mut out = Array2::zeros((self.n_states, self.n_states));
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let w = pi.probs()[[s, a]];
                if w == 0.0 {
                    continue;
                }
                for sn in 0..self.n_states {
                    out[[s, sn]] += w * self.transition[[s, a, sn]];
                }
            }
        }
        out
    }

    /// Exact policy evaluation: solves `v = r_pi + gamma P_pi v` directly,
    /// then derives `q`, the advantage and the expected return `j`.
    pub fn policy_evaluation(&self, pi: &TabularPolicy) -> Result<ValueBundle> {
        self.check_policy(pi)?;
        let n = self.n_states;
        let r_sa = self.expected_reward();
        let p_pi = self.policy_transition(pi);
        let mut r_pi = Array1::zeros(n);
        for s in 0..n {
            for a in 0..self.n_actions {
                r_pi[s] += pi.probs()[[s, a]] * r_sa[[s, a]];
            }
        }
        let mut a_mat = nalgebra::DMatrix::identity(n, n);
        for s in 0..n {
            for sn in 0..n {
                a_mat[(s, sn)] -= self.discount * p_pi[[s, sn]];
            }
        }
        let b = nalgebra::DVector::from_iterator(n, r_pi.iter().copied());
        let v = solve_linear(a_mat, b, "policy_evaluation")?;

        let mut q = Array2::zeros((n, self.n_actions));
        for s in 0..n {
            for a in 0..self.n_actions {
                let mut acc = r_sa[[s, a]];
                for sn in 0..n {
                    acc += self.discount * self.transition[[s, a, sn]] * v[sn];
                }
                q[[s, a]] = acc;
            }
        }
        let mut advantage = q.clone();
        for s in 0..n {
            for a in 0..self.n_actions {
                advantage[[s, a]] -= v[s];
            }
        }
        let j = self.initial_dist.dot(&v);
        Ok(ValueBundle { v, q, advantage, j })
    }

    /// Exact soft policy evaluation at temperature `alpha`: solves the linear
    /// fixed point of the soft Bellman operator for the fixed policy `pi`.
    ///
    /// Requires full support so that `log pi` is finite everywhere.
    pub fn soft_policy_evaluation(
        &self,
        pi: &TabularPolicy,
        alpha: f64,
    ) -> Result<SoftValueBundle> {
        self.check_policy(pi)?;
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidValue(format!(
                "temperature must be positive, got {alpha}"
            )));
        }
        pi.require_full_support()?;

        let n = self.n_states;
        let na = self.n_actions;
        let dim = n * na;
        let idx = |s: usize, a: usize| s * na + a;
        let r_sa = self.expected_reward();

        // Per-state entropy of pi.
        let mut entropy: Array1<f64> = Array1::zeros(n);
        for s in 0..n {
            for a in 0..na {
                let p = pi.probs()[[s, a]];
                entropy[s] -= p * p.ln();
            }
        }

        // q = c + gamma * M q with M[(s,a),(s',a')] = P(s'|s,a) pi(a'|s')
        // and c(s,a) = r(s,a) + gamma * alpha * sum_{s'} P(s'|s,a) H(s').
        let mut a_mat = nalgebra::DMatrix::identity(dim, dim);
        let mut b = nalgebra::DVector::zeros(dim);
        for s in 0..n {
            for a in 0..na {
                let row = idx(s, a);
                let mut c = r_sa[[s, a]];
                for sn in 0..n {
                    let p = self.transition[[s, a, sn]];
                    if p == 0.0 {
                        continue;
                    }
                    c += self.discount * alpha * p * entropy[sn];
                    for an in 0..na {
                        a_mat[(row, idx(sn, an))] -= self.discount * p * pi.probs()[[sn, an]];
                    }
                }
                b[row] = c;
            }
        }
        let q_flat = solve_linear(a_mat, b, "soft_policy_evaluation")?;
        let mut q_soft = Array2::zeros((n, na));
        for s in 0..n {
            for a in 0..na {
                q_soft[[s, a]] = q_flat[idx(s, a)];
            }
        }
        let v_soft = soft_state_values(&q_soft, pi, alpha);
        Ok(SoftValueBundle {
            q_soft,
            v_soft,
            temperature: alpha,
        })
    }

    /// Normalized discounted state occupancy and the time marginals
    /// `p_0..p_T`, where `T` is the smallest horizon with
    /// `gamma^(T+1) / (1 - gamma) < truncation_tol`.
    pub fn discounted_occupancy(
        &self,
        pi: &TabularPolicy,
        truncation_tol: f64,
    ) -> Result<OccupancyReport> {
        self.check_policy(pi)?;
        if !truncation_tol.is_finite() || truncation_tol <= 0.0 {
            return Err(Error::InvalidValue(format!(
                "truncation tolerance must be positive, got {truncation_tol}"
            )));
        }
        let n = self.n_states;
        let p_pi = self.policy_transition(pi);

        // d = (1 - gamma) rho + gamma P_pi^T d
        let mut a_mat = nalgebra::DMatrix::identity(n, n);
        for s in 0..n {
            for sn in 0..n {
                a_mat[(sn, s)] -= self.discount * p_pi[[s, sn]];
            }
        }
        let b = nalgebra::DVector::from_iterator(
            n,
            self.initial_dist.iter().map(|r| (1.0 - self.discount) * r),
        );
        let d_state = solve_linear(a_mat, b, "discounted_occupancy")?;

        let horizon_t = truncation_horizon(self.discount, truncation_tol);
        let mut time_marginals = Vec::with_capacity(horizon_t + 1);
        let mut p_t = self.initial_dist.clone();
        time_marginals.push(p_t.clone());
        for _ in 0..horizon_t {
            let mut next = Array1::zeros(n);
            for s in 0..n {
                if p_t[s] == 0.0 {
                    continue;
                }
                for sn in 0..n {
                    next[sn] += p_t[s] * p_pi[[s, sn]];
                }
            }
            p_t = next;
            time_marginals.push(p_t.clone());
        }

        let mut d_state_action = Array2::zeros((n, self.n_actions));
        for s in 0..n {
            for a in 0..self.n_actions {
                d_state_action[[s, a]] = d_state[s] * pi.probs()[[s, a]];
            }
        }
        Ok(OccupancyReport {
            d_state,
            d_state_action,
            time_marginals,
            horizon_t,
        })
    }

    /// State marginals `p_0..p_t_max` under `pi` by forward propagation.
    pub fn time_marginals(&self, pi: &TabularPolicy, t_max: usize) -> Result<Vec<Array1<f64>>> {
        self.check_policy(pi)?;
        let n = self.n_states;
        let p_pi = self.policy_transition(pi);
        let mut out = Vec::with_capacity(t_max + 1);
        let mut p_t = self.initial_dist.clone();
        out.push(p_t.clone());
        for _ in 0..t_max {
            let mut next = Array1::zeros(n);
            for s in 0..n {
                if p_t[s] == 0.0 {
                    continue;
                }
                for sn in 0..n {
                    next[sn] += p_t[s] * p_pi[[s, sn]];
                }
            }
            p_t = next;
            out.push(p_t.clone());
        }
        Ok(out)
    }

    /// Soft value iteration to the soft-optimal `q*` within `tol` sup-norm.
    pub fn soft_value_iteration(
        &self,
        alpha: f64,
        tol: f64,
        max_iters: usize,
    ) -> Result<Array2<f64>> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::InvalidValue(format!(
                "temperature must be positive, got {alpha}"
            )));
        }
        let n = self.n_states;
        let na = self.n_actions;
        let r_sa = self.expected_reward();
        let mut q: Array2<f64> = Array2::zeros((n, na));
        for _ in 0..max_iters {
            // v*(s) = alpha * log sum_a exp(q(s,a)/alpha)
            let mut v: Array1<f64> = Array1::zeros(n);
            for s in 0..n {
                v[s] = alpha * log_sum_exp(q.row(s).iter().map(|x| x / alpha));
            }
            let mut next = Array2::zeros((n, na));
            let mut delta: f64 = 0.0;
            for s in 0..n {
                for a in 0..na {
                    let mut acc = r_sa[[s, a]];
                    for sn in 0..n {
                        acc += self.discount * self.transition[[s, a, sn]] * v[sn];
                    }
                    next[[s, a]] = acc;
                    delta = delta.max((acc - q[[s, a]]).abs());
                }
            }
            q = next;
            if delta < tol {
                return Ok(q);
            }
        }
        Err(Error::InvalidValue(format!(
            "soft value iteration did not converge to {tol} within {max_iters} sweeps"
        )))
    }
}

fn check_distribution_row<'a>(row: impl Iterator<Item = &'a f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "{what}: entry {p} is negative or non-finite"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidDistribution(format!(
            "{what}: sums to {sum}, expected 1 within {PROB_TOL}"
        )));
    }
    Ok(())
}

/// Smallest `T >= 0` with `gamma^(T+1) / (1 - gamma) < tol`.
pub fn truncation_horizon(gamma: f64, tol: f64) -> usize {
    let mut t = 0usize;
    let mut tail = gamma / (1.0 - gamma);
    while tail >= tol && t < 1_000_000 {
        tail *= gamma;
        t += 1;
    }
    t
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// A row-stochastic action distribution per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let (n_states, _) = probs.dim();
        for s in 0..n_states {
            check_distribution_row(probs.row(s).iter(), &format!("policy row {s}"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn has_full_support(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }

    pub fn require_full_support(&self) -> Result<()> {
        for ((s, a), &p) in self.probs.indexed_iter() {
            if p <= 0.0 {
                return Err(Error::ZeroProbabilityAction {
                    state: s,
                    action: a,
                });
            }
        }
        Ok(())
    }

    /// Per-state entropy `-sum_a pi(a|s) log pi(a|s)` (zero terms skipped).
    pub fn entropy(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_states());
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                let p = self.probs[[s, a]];
                if p > 0.0 {
                    out[s] -= p * p.ln();
                }
            }
        }
        out
    }
}

/// The exact minimizer of the soft policy objective over unconstrained
/// per-state distributions: `pi(a|s) ∝ exp(q(s,a)/alpha)`, stabilized by
/// subtracting the per-state maximum before exponentiation.
pub fn soft_greedy_improvement(q_soft: &Array2<f64>, alpha: f64) -> Result<TabularPolicy> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidValue(format!(
            "temperature must be positive, got {alpha}"
        )));
    }
    if q_soft.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue(
            "non-finite q entry in soft greedy improvement".into(),
        ));
    }
    let (n, na) = q_soft.dim();
    let mut probs = Array2::zeros((n, na));
    for s in 0..n {
        let row_max = q_soft
            .row(s)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for a in 0..na {
            let e = ((q_soft[[s, a]] - row_max) / alpha).exp();
            probs[[s, a]] = e;
            sum += e;
        }
        for a in 0..na {
            probs[[s, a]] /= sum;
        }
    }
    TabularPolicy::new(probs)
}

/// Soft state values `v(s) = sum_a pi(a|s) (q(s,a) - alpha log pi(a|s))`.
pub fn soft_state_values(q_soft: &Array2<f64>, pi: &TabularPolicy, alpha: f64) -> Array1<f64> {
    let (n, na) = q_soft.dim();
    let mut v = Array1::zeros(n);
    for s in 0..n {
        for a in 0..na {
            let p = pi.probs()[[s, a]];
            if p > 0.0 {
                v[s] += p * (q_soft[[s, a]] - alpha * p.ln());
            }
        }
    }
    v
}

/// Exact values of a policy on an MDP: `v`, `q`, the advantage `q - v`, and
/// the expected return `j = rho . v`.
#[derive(Debug, Clone)]
pub struct ValueBundle {
    pub v: Array1<f64>,
    pub q: Array2<f64>,
    pub advantage: Array2<f64>,
    pub j: f64,
}

impl ValueBundle {
    /// Largest absolute advantage over all `(s, a)`.
    pub fn max_abs_advantage(&self) -> f64 {
        self.advantage.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }
}

/// Fixed point of the soft Bellman operator for a fixed policy.
#[derive(Debug, Clone)]
pub struct SoftValueBundle {
    pub q_soft: Array2<f64>,
    pub v_soft: Array1<f64>,
    pub temperature: f64,
}

/// Normalized discounted state occupancy plus the truncated time marginals
/// that certify it.
#[derive(Debug, Clone)]
pub struct OccupancyReport {
    pub d_state: Array1<f64>,
    pub d_state_action: Array2<f64>,
    pub time_marginals: Vec<Array1<f64>>,
    pub horizon_t: usize,
}
