//! Trajectory data collected by the agent loop and consumed by learners.
//!
//! Each step stores the transition itself plus, per group member that was
//! visible at that step, the member model's action probabilities and its
//! value prediction at `s_t`. After a model adoption the learner trains
//! on the same locally collected transitions but reads the adopted
//! member's annotation stream instead of its own.

use crate::nn::ActionDistribution;
use crate::AgentId;
use std::collections::BTreeMap;

/// A model's predictions at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs {
    /// Action probabilities, in action order.
    pub probs: Vec<f64>,
    /// Value prediction: a state value or one value per action. Peers
    /// whose value model never arrived contribute `None`.
    pub value: Option<ValueEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueEstimate {
    /// V(s).
    State(f64),
    /// Q(s, a) for every action.
    Action(Vec<f64>),
}

impl ValueEstimate {
    /// Collapse to a state value: V directly, or sum of pi(a|s) * Q(s,a)
    /// for an action-value head.
    pub fn state_value(&self, probs: &[f64]) -> f64 {
        match self {
            ValueEstimate::State(v) => *v,
            ValueEstimate::Action(q) => probs.iter().zip(q).map(|(p, q)| p * q).sum(),
        }
    }
}

impl ModelOutputs {
    pub fn from_policy(dist: &ActionDistribution, value: ValueEstimate) -> Self {
        Self {
            probs: dist.probs.clone(),
            value: Some(value),
        }
    }
}

/// One environment transition plus per-member annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    /// Member id -> that member's predictions at `obs`. Always contains
    /// the owner's own entry.
    pub annotations: BTreeMap<AgentId, ModelOutputs>,
}

impl StepRecord {
    /// Annotation stream for training: the requested source if that
    /// member annotated this step, else the owner's own (a member that
    /// joined the group mid-batch has no annotations for earlier steps).
    pub fn annotation_for(&self, source: AgentId, own: AgentId) -> &ModelOutputs {
        self.annotations
            .get(&source)
            .or_else(|| self.annotations.get(&own))
            .expect("own annotations recorded for every step")
    }
}

/// A rollout segment: temporally contiguous steps of one agent, possibly
/// spanning episode boundaries (terminals mark the seams).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBatch {
    pub steps: Vec<StepRecord>,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_head_state_value_is_probability_weighted() {
        let v = ValueEstimate::Action(vec![1.0, 3.0]);
        assert_eq!(v.state_value(&[0.25, 0.75]), 0.25 + 2.25);
        let v = ValueEstimate::State(2.5);
        assert_eq!(v.state_value(&[0.5, 0.5]), 2.5);
    }

    #[test]
    fn annotation_falls_back_to_own() {
        let own = AgentId(0);
        let peer = AgentId(1);
        let mk = |p: f64| ModelOutputs {
            probs: vec![p, 1.0 - p],
            value: Some(ValueEstimate::State(0.0)),
        };
        let mut annotations = BTreeMap::new();
        annotations.insert(own, mk(0.9));
        let rec = StepRecord {
            obs: vec![0.0],
            action: 0,
            reward: 0.0,
            next_obs: vec![0.0],
            terminal: false,
            annotations,
        };
        assert_eq!(rec.annotation_for(peer, own).probs[0], 0.9);
    }
}
