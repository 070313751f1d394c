//! A numerical laboratory for policy transfer between Markov decision processes.
//!
//! The crate has three layers:
//!
//! * [`mdp`] — finite MDPs with exact solvers (policy evaluation, soft policy
//!   evaluation, discounted occupancies, soft value iteration), all computed by
//!   direct linear solves rather than iteration.
//! * [`relativity`] — the return-gap decomposition between two MDPs under two
//!   policies, the surrogate objectives that approximate it from one side, the
//!   divergence-based gap constants, and numerical verifiers for every bound.
//! * [`env`], [`soft_rl`], [`transfer`] — environments (seeded tabular pairs,
//!   a slippery gridworld, CartPole with a trainable pole length), a tabular
//!   soft Q-learner with replay buffers, and the RPO / RTO / RPTO transfer
//!   algorithms built on top of the learner.

pub mod env;
pub mod error;
pub mod mdp;
pub mod relativity;
pub mod soft_rl;
pub mod transfer;

pub use error::{Error, Result};
