//! The classic cart-pole balancing benchmark.
//!
//! Physics follow the standard published formulation: a cart of mass 1.0
//! with a pole of mass 0.1 and half-length 0.5, force ±10 N, Euler
//! integration at tau = 0.02 s, gravity 9.8. The episode ends when the
//! cart leaves ±2.4, the pole tips past 12 degrees, or the step cap is
//! hit. Reward is +1.0 for every step, including the terminating one.

use super::{EnvError, EnvSpec, Environment, StepResult};
use crate::rng::SplitMix64;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_THRESHOLD: f64 = 2.4;
const THETA_THRESHOLD: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleState {
    x: f64,
    x_dot: f64,
    theta: f64,
    theta_dot: f64,
    rng: SplitMix64,
    steps: u32,
    done: bool,
    transitions: u64,
}

#[derive(Debug, Clone)]
pub struct CartPole {
    max_steps: u32,
    state: CartPoleState,
}

impl CartPole {
    /// `max_steps` is the episode cap (200 in the classic setting, 500 in
    /// the longer variant).
    pub fn new(max_steps: u32) -> Self {
        Self {
            max_steps,
            state: CartPoleState {
                x: 0.0,
                x_dot: 0.0,
                theta: 0.0,
                theta_dot: 0.0,
                rng: SplitMix64::new(0),
                steps: 0,
                done: true,
                transitions: 0,
            },
        }
    }

    fn observation(&self) -> Vec<f64> {
        let s = &self.state;
        vec![s.x, s.x_dot, s.theta, s.theta_dot]
    }

    #[cfg(test)]
    pub(crate) fn set_state(&mut self, x: f64, x_dot: f64, theta: f64, theta_dot: f64) {
        self.state.x = x;
        self.state.x_dot = x_dot;
        self.state.theta = theta;
        self.state.theta_dot = theta_dot;
        self.state.done = false;
    }
}

impl Environment for CartPole {
    type State = CartPoleState;

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 4,
            action_count: 2,
            max_episode_steps: self.max_steps,
            reward_range: (0.0, 1.0),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let transitions = self.state.transitions;
        let mut rng = SplitMix64::new(seed);
        self.state = CartPoleState {
            x: rng.next_range(-0.05, 0.05),
            x_dot: rng.next_range(-0.05, 0.05),
            theta: rng.next_range(-0.05, 0.05),
            theta_dot: rng.next_range(-0.05, 0.05),
            rng,
            steps: 0,
            done: false,
            transitions,
        };
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeOver);
        }
        if action >= 2 {
            return Err(EnvError::InvalidAction {
                action,
                action_count: 2,
            });
        }
        let s = &mut self.state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let cos_theta = s.theta.cos();
        let sin_theta = s.theta.sin();
        let temp = (force + POLE_MASS_LENGTH * s.theta_dot * s.theta_dot * sin_theta) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin_theta - cos_theta * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos_theta * cos_theta / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_theta / TOTAL_MASS;

        s.x += TAU * s.x_dot;
        s.x_dot += TAU * x_acc;
        s.theta += TAU * s.theta_dot;
        s.theta_dot += TAU * theta_acc;

        s.steps += 1;
        s.transitions += 1;
        let failed = s.x.abs() > X_THRESHOLD || s.theta.abs() > THETA_THRESHOLD;
        s.done = failed || s.steps >= self.max_steps;
        let terminal = s.done;
        Ok(StepResult {
            observation: self.observation(),
            reward: 1.0,
            terminal,
        })
    }

    fn snapshot(&self) -> CartPoleState {
        self.state.clone()
    }

    fn restore(&mut self, state: &CartPoleState) {
        self.state = state.clone();
    }

    fn transitions(&self) -> u64 {
        self.state.transitions
    }
}
