//! Learner hyperparameters.

use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Algorithm {
    A2c,
    Ppo,
    Acer,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::A2c => "a2c",
            Algorithm::Ppo => "ppo",
            Algorithm::Acer => "acer",
        })
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a2c" => Ok(Algorithm::A2c),
            "ppo" => Ok(Algorithm::Ppo),
            "acer" => Ok(Algorithm::Acer),
            other => Err(format!("unknown algorithm {other:?} (expected a2c, ppo or acer)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LearnerConfigError {
    #[error("{field} must be {requirement}, got {got}")]
    OutOfRange {
        field: &'static str,
        requirement: &'static str,
        got: f64,
    },
}

/// Hyperparameters for one learner. Fields irrelevant to an algorithm
/// (e.g. `clip_epsilon` for A2C) are simply unused by it.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    /// Update cadence: the learner trains when this many steps buffered.
    pub batch_size: usize,
    /// PPO surrogate clip range.
    pub clip_epsilon: f64,
    /// Importance-weight truncation constant for the Retrace estimator
    /// and the ACER actor.
    pub truncation_c: f64,
    pub ppo_epochs: usize,
    pub ppo_minibatch: usize,
    /// Standardize PPO advantages per batch (mean 0, std 1).
    pub ppo_adv_norm: bool,
    /// Replay capacity in whole batches; 0 disables replay.
    pub replay_capacity: usize,
    /// Replay updates drawn per fresh ACER update.
    pub replay_ratio: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global L2 gradient-norm ceiling; non-positive disables clipping.
    pub grad_clip: f64,
    pub optimizer: OptimizerKind,
    pub hidden_dims: Vec<usize>,
}

impl LearnerConfig {
    /// Defaults per algorithm. Batch sizes: 5 for A2C, 20 for ACER, 256
    /// for PPO at desk scale (the large-scale PPO setting of 2048 remains
    /// a config choice).
    pub fn defaults_for(algorithm: Algorithm) -> Self {
        let base = Self {
            gamma: 0.99,
            learning_rate: 0.02,
            batch_size: 5,
            clip_epsilon: 0.2,
            truncation_c: 10.0,
            ppo_epochs: 4,
            ppo_minibatch: 64,
            ppo_adv_norm: true,
            replay_capacity: 500,
            replay_ratio: 4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip: 0.5,
            optimizer: OptimizerKind::Sgd,
            hidden_dims: vec![64, 64],
        };
        match algorithm {
            Algorithm::A2c => base,
            Algorithm::Ppo => Self {
                batch_size: 256,
                learning_rate: 0.01,
                ..base
            },
            Algorithm::Acer => Self {
                batch_size: 20,
                learning_rate: 0.01,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), LearnerConfigError> {
        let checks: [(&'static str, f64, &'static str, bool); 10] = [
            ("gamma", self.gamma, "in (0, 1]", self.gamma > 0.0 && self.gamma <= 1.0),
            ("learning_rate", self.learning_rate, "> 0", self.learning_rate > 0.0),
            ("batch_size", self.batch_size as f64, ">= 1", self.batch_size >= 1),
            ("clip_epsilon", self.clip_epsilon, "> 0", self.clip_epsilon > 0.0),
            ("truncation_c", self.truncation_c, ">= 1", self.truncation_c >= 1.0),
            ("ppo_epochs", self.ppo_epochs as f64, ">= 1", self.ppo_epochs >= 1),
            ("ppo_minibatch", self.ppo_minibatch as f64, ">= 1", self.ppo_minibatch >= 1),
            ("entropy_coef", self.entropy_coef, ">= 0", self.entropy_coef >= 0.0),
            ("value_coef", self.value_coef, ">= 0", self.value_coef >= 0.0),
            (
                "hidden_dims",
                self.hidden_dims.len() as f64,
                "nonempty with positive dims",
                !self.hidden_dims.is_empty() && self.hidden_dims.iter().all(|&d| d > 0),
            ),
        ];
        for (field, got, requirement, ok) in checks {
            if !ok {
                return Err(LearnerConfigError::OutOfRange {
                    field,
                    requirement,
                    got,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_per_algorithm_batch_sizes() {
        assert_eq!(LearnerConfig::defaults_for(Algorithm::A2c).batch_size, 5);
        assert_eq!(LearnerConfig::defaults_for(Algorithm::Ppo).batch_size, 256);
        assert_eq!(LearnerConfig::defaults_for(Algorithm::Acer).batch_size, 20);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut cfg = LearnerConfig::defaults_for(Algorithm::A2c);
        cfg.gamma = 1.5;
        assert!(cfg.validate().is_err());
        cfg.gamma = 0.99;
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        cfg.learning_rate = 0.1;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn algorithm_round_trips_through_strings() {
        for a in [Algorithm::A2c, Algorithm::Ppo, Algorithm::Acer] {
            assert_eq!(a.to_string().parse::<Algorithm>().unwrap(), a);
        }
        assert!("dqn".parse::<Algorithm>().is_err());
    }
}
