//! Group-agent reinforcement learning at desk scale.
//!
//! A group of agents, each trained by a different actor-critic algorithm
//! (A2C, PPO, ACER) in its own copy of an environment, asynchronously
//! share two kinds of knowledge: their policy/value model parameters and
//! their per-episode accumulated reward score. At every time step an
//! agent chooses between its own action and actions suggested by its
//! peers' policies via one of three selection rules (probability
//! addition, probability multiplication, or the reward-value-likelihood
//! combination), and may wholesale adopt a peer's models when that
//! peer's suggestions dominated a training batch.
//!
//! The crate is organized the way the system decomposes:
//!
//! * [`nn`]: minimal MLPs with exact analytic gradients and a bit-exact
//!   snapshot format (the unit of knowledge exchange);
//! * [`env`]: deterministic, seedable, snapshot-capable environments
//!   (cart-pole and a grid world);
//! * [`learner`]: the three actor-critic learners behind one trait,
//!   including the Retrace off-policy critic targets for ACER;
//! * [`group`]: the knowledge bus, the PA/PM/Combo selection rules,
//!   usage accounting, and model adoption;
//! * [`harness`]: the experiment runner, metrics (reward-at-step
//!   tables, speed-up ratios), output emission, and the φ sweep.
//!
//! The `hgarl` binary drives all of it from the command line; see the
//! guide chapters under [`guide`] for a walkthrough.

pub mod env;
pub mod group;
pub mod harness;
pub mod learner;
pub mod nn;
pub mod rng;

pub mod guide;

use std::fmt;

/// Identifier of one agent within a run's roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub u16);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
