//! Classic cart-pole with a trainable pole length.
//!
//! The pole is a uniform rod; the standard equations of motion use its
//! half-length `l = pole_length / 2`, so `pole_length = 1.0` reproduces the
//! usual control benchmark. Integration is semi-implicit Euler: velocities
//! first, then positions with the new velocities.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{Discretizer, Environment, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Full pole length in meters; the trainable dynamics parameter.
    pub pole_length: f64,
    pub gravity: f64,
    pub force_magnitude: f64,
    pub time_step: f64,
    pub angle_fail_threshold: f64,
    pub position_fail_threshold: f64,
    pub max_episode_steps: usize,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 1.0,
            gravity: 9.8,
            force_magnitude: 10.0,
            time_step: 0.02,
            angle_fail_threshold: 12.0_f64.to_radians(),
            position_fail_threshold: 2.4,
            max_episode_steps: 500,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_length", self.pole_length),
            ("gravity", self.gravity),
            ("force_magnitude", self.force_magnitude),
            ("time_step", self.time_step),
            ("angle_fail_threshold", self.angle_fail_threshold),
            ("position_fail_threshold", self.position_fail_threshold),
        ];
        for (name, v) in positives {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidValue(format!(
                    "{name} must be strictly positive, got {v}"
                )));
            }
        }
        if self.max_episode_steps == 0 {
            return Err(Error::InvalidValue(
                "max_episode_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn with_pole_length(&self, pole_length: f64) -> Self {
        Self {
            pole_length,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub cart_position: f64,
    pub cart_velocity: f64,
    pub pole_angle: f64,
    pub pole_angular_velocity: f64,
}

impl CartPoleState {
    pub fn is_finite(&self) -> bool {
        self.cart_position.is_finite()
            && self.cart_velocity.is_finite()
            && self.pole_angle.is_finite()
            && self.pole_angular_velocity.is_finite()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.cart_position,
            self.cart_velocity,
            self.pole_angle,
            self.pole_angular_velocity,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForceDirection {
    Left,
    Right,
}

impl ForceDirection {
    pub fn from_action(action: usize) -> Self {
        if action == 0 {
            ForceDirection::Left
        } else {
            ForceDirection::Right
        }
    }
}

/// Next continuous state under the equations of motion, with no
/// reward or termination logic.
pub fn next_state(
    params: &CartPoleParams,
    state: &CartPoleState,
    action: ForceDirection,
) -> CartPoleState {
    let force = match action {
        ForceDirection::Left => -params.force_magnitude,
        ForceDirection::Right => params.force_magnitude,
    };
    let half_length = params.pole_length / 2.0;
    let total_mass = params.cart_mass + params.pole_mass;
    let theta = state.pole_angle;
    let theta_dot = state.pole_angular_velocity;
    let cos_theta = theta.cos();
    let sin_theta = theta.sin();

    let temp =
        (force + params.pole_mass * half_length * theta_dot * theta_dot * sin_theta) / total_mass;
    let theta_acc = (params.gravity * sin_theta - cos_theta * temp)
        / (half_length * (4.0 / 3.0 - params.pole_mass * cos_theta * cos_theta / total_mass));
    let x_acc = temp - params.pole_mass * half_length * theta_acc * cos_theta / total_mass;

    let dt = params.time_step;
    let cart_velocity = state.cart_velocity + dt * x_acc;
    let cart_position = state.cart_position + dt * cart_velocity;
    let pole_angular_velocity = state.pole_angular_velocity + dt * theta_acc;
    let pole_angle = state.pole_angle + dt * pole_angular_velocity;
    CartPoleState {
        cart_position,
        cart_velocity,
        pole_angle,
        pole_angular_velocity,
    }
}

/// One simulator step: returns the next state, the +1 survival reward (zero
/// on the failing step) and whether a failure threshold was crossed. Step
///-count truncation is handled by the episode driver.
pub fn cartpole_step(
    params: &CartPoleParams,
    state: &CartPoleState,
    action: ForceDirection,
) -> Result<(CartPoleState, f64, bool)> {
    if !state.is_finite() {
        return Err(Error::InvalidValue("non-finite cart-pole state".into()));
    }
    let next = next_state(params, state, action);
    let done = next.pole_angle.abs() > params.angle_fail_threshold
        || next.cart_position.abs() > params.position_fail_threshold;
    let reward = if done { 0.0 } else { 1.0 };
    Ok((next, reward, done))
}

/// Partial derivatives of the next state with respect to the pole length,
/// by central finite differences at `h = 1e-4 * pole_length`.
pub fn cartpole_step_gradient(
    params: &CartPoleParams,
    state: &CartPoleState,
    action: ForceDirection,
) -> [f64; 4] {
    cartpole_step_gradient_with_step(params, state, action, 1e-4 * params.pole_length)
}

pub fn cartpole_step_gradient_with_step(
    params: &CartPoleParams,
    state: &CartPoleState,
    action: ForceDirection,
    h: f64,
) -> [f64; 4] {
    let plus = next_state(
        &params.with_pole_length(params.pole_length + h),
        state,
        action,
    );
    let minus = next_state(
        &params.with_pole_length(params.pole_length - h),
        state,
        action,
    );
    let p = plus.as_array();
    let m = minus.as_array();
    [
        (p[0] - m[0]) / (2.0 * h),
        (p[1] - m[1]) / (2.0 * h),
        (p[2] - m[2]) / (2.0 * h),
        (p[3] - m[3]) / (2.0 * h),
    ]
}

/// Total mechanical energy of the cart-pole (kinetic of the cart, kinetic
/// and rotational of the rod about its center of mass, potential of the rod
/// center of mass above the pivot). Conserved by the true dynamics when no
/// force is applied.
pub fn mechanical_energy(params: &CartPoleParams, state: &CartPoleState) -> f64 {
    let l = params.pole_length / 2.0;
    let m_c = params.cart_mass;
    let m_p = params.pole_mass;
    let x_dot = state.cart_velocity;
    let theta = state.pole_angle;
    let theta_dot = state.pole_angular_velocity;
    let kinetic_cart = 0.5 * m_c * x_dot * x_dot;
    let com_speed_sq =
        x_dot * x_dot + 2.0 * x_dot * l * theta_dot * theta.cos() + l * l * theta_dot * theta_dot;
    let kinetic_pole = 0.5 * m_p * com_speed_sq + 0.5 * (m_p * l * l / 3.0) * theta_dot * theta_dot;
    let potential = m_p * params.gravity * l * theta.cos();
    kinetic_cart + kinetic_pole + potential
}

/// Episodic CartPole with discretized observations for tabular learners.
/// Failure thresholds terminate; the step limit truncates.
#[derive(Debug, Clone)]
pub struct CartPoleEnv {
    params: CartPoleParams,
    discretizer: Discretizer,
    state: CartPoleState,
    steps: usize,
}

impl CartPoleEnv {
    pub fn new(params: CartPoleParams, discretizer: Discretizer) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            discretizer,
            state: CartPoleState::default(),
            steps: 0,
        })
    }

    pub fn params(&self) -> &CartPoleParams {
        &self.params
    }

    pub fn set_pole_length(&mut self, pole_length: f64) {
        self.params.pole_length = pole_length;
    }

    pub fn discretizer(&self) -> &Discretizer {
        &self.discretizer
    }

    pub fn continuous_state(&self) -> CartPoleState {
        self.state
    }

    /// Raw step that also exposes the continuous next state.
    pub fn step_continuous(&mut self, action: usize) -> (CartPoleState, f64, bool, bool) {
        let (next, reward, terminal) = cartpole_step(
            &self.params,
            &self.state,
            ForceDirection::from_action(action),
        )
        .expect("cart-pole state stayed finite");
        self.state = next;
        self.steps += 1;
        let truncated = !terminal && self.steps >= self.params.max_episode_steps;
        (next, reward, terminal, truncated)
    }
}

impl Environment for CartPoleEnv {
    fn n_states(&self) -> usize {
        self.discretizer.n_cells()
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> usize {
        self.state = CartPoleState {
            cart_position: rng.random_range(-0.05..0.05),
            cart_velocity: rng.random_range(-0.05..0.05),
            pole_angle: rng.random_range(-0.05..0.05),
            pole_angular_velocity: rng.random_range(-0.05..0.05),
        };
        self.steps = 0;
        self.discretizer.index(&self.state)
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> StepOutcome {
        let (next, reward, terminal, truncated) = self.step_continuous(action);
        StepOutcome {
            next_state: self.discretizer.index(&next),
            reward,
            terminal,
            truncated,
        }
    }
}
