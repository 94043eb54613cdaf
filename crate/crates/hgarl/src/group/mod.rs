//! Knowledge exchange between agents.
//!
//! Agents share two things: serialized model parameters and the
//! accumulated reward score of their latest completed episode. Messages
//! travel over a [`GroupBus`] with latest-wins mailboxes: each receiver
//! keeps at most one message per sender, reads never block, and an agent
//! with an empty mailbox simply proceeds alone. Received models are
//! deserialized into a [`PolicySet`], the per-agent view that the
//! selection rules read.

pub mod adoption;
pub mod rules;
pub mod wire;

use crate::nn::snapshot;
use crate::nn::MlpModel;
use crate::AgentId;
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("peer {sender} sent a model with mismatched architecture: {context}")]
    ArchitectureMismatch { sender: AgentId, context: String },
    #[error("snapshot from peer {sender} failed to parse: {source}")]
    BadSnapshot {
        sender: AgentId,
        source: snapshot::SnapshotError,
    },
    #[error("lookahead step failed: {0}")]
    Lookahead(String),
}

/// One agent's knowledge as sent to peers: serialized models plus the
/// accumulated reward of its latest completed episode (`None` until the
/// first episode completes).
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeMessage {
    pub sender: AgentId,
    /// Strictly increasing per sender; stale messages are dropped.
    pub update_counter: u64,
    /// Sender's time-step count when the message was built.
    pub wall_step: u64,
    pub accumulated_reward: Option<f64>,
    pub policy: Vec<u8>,
    pub value: Option<Vec<u8>>,
}

/// Multi-producer, per-agent-consumer bus with latest-wins mailboxes.
/// Shared by handle; usable from one thread (deterministic interleave)
/// or many (one per agent).
#[derive(Debug, Clone)]
pub struct GroupBus {
    inner: Arc<Mutex<Vec<BTreeMap<AgentId, KnowledgeMessage>>>>,
}

impl GroupBus {
    pub fn new(agent_count: usize) -> Self {
        Self {
            inner: Arc::new(Mutex::new(vec![BTreeMap::new(); agent_count])),
        }
    }

    /// Deliver to every mailbox except the sender's own. A newer message
    /// from the same sender overwrites; an older one is discarded.
    pub fn publish(&self, msg: KnowledgeMessage) {
        let mut boxes = self.inner.lock().unwrap();
        for (i, mailbox) in boxes.iter_mut().enumerate() {
            if i == msg.sender.0 as usize {
                continue;
            }
            match mailbox.get(&msg.sender) {
                Some(existing) if existing.update_counter >= msg.update_counter => {}
                _ => {
                    mailbox.insert(msg.sender, msg.clone());
                }
            }
        }
    }

    /// Take everything waiting for `agent`. Never blocks on peers.
    pub fn drain(&self, agent: AgentId) -> Vec<KnowledgeMessage> {
        let mut boxes = self.inner.lock().unwrap();
        let mailbox = &mut boxes[agent.0 as usize];
        let drained: Vec<KnowledgeMessage> = mailbox.values().cloned().collect();
        mailbox.clear();
        drained
    }
}

/// A peer's deserialized knowledge.
#[derive(Debug, Clone)]
pub struct PeerKnowledge {
    pub policy: MlpModel,
    pub value: Option<MlpModel>,
    pub accumulated_reward: Option<f64>,
    pub update_counter: u64,
    pub wall_step: u64,
}

/// The owner's view of its peers: latest usable model per sender.
#[derive(Debug, Clone)]
pub struct PolicySet {
    owner: AgentId,
    policy_dims: Vec<usize>,
    peers: BTreeMap<AgentId, PeerKnowledge>,
}

impl PolicySet {
    /// `policy_dims` pins the group's common architecture; any message
    /// whose policy deviates is rejected.
    pub fn new(owner: AgentId, policy_dims: Vec<usize>) -> Self {
        Self {
            owner,
            policy_dims,
            peers: BTreeMap::new(),
        }
    }

    pub fn owner(&self) -> AgentId {
        self.owner
    }

    /// Validate and store one message. Messages older than what is
    /// already held, and messages with foreign architectures, leave the
    /// set unchanged (the latter with an error for the caller to log).
    pub fn ingest(&mut self, msg: KnowledgeMessage) -> Result<(), GroupError> {
        if let Some(existing) = self.peers.get(&msg.sender) {
            if existing.update_counter >= msg.update_counter {
                return Ok(());
            }
        }
        let policy = snapshot::deserialize(&msg.policy).map_err(|source| GroupError::BadSnapshot {
            sender: msg.sender,
            source,
        })?;
        if policy.layer_dims() != self.policy_dims.as_slice() {
            return Err(GroupError::ArchitectureMismatch {
                sender: msg.sender,
                context: format!(
                    "policy dims {:?}, group uses {:?}",
                    policy.layer_dims(),
                    self.policy_dims
                ),
            });
        }
        let value = match &msg.value {
            Some(bytes) => Some(snapshot::deserialize(bytes).map_err(|source| {
                GroupError::BadSnapshot {
                    sender: msg.sender,
                    source,
                }
            })?),
            None => None,
        };
        self.peers.insert(
            msg.sender,
            PeerKnowledge {
                policy,
                value,
                accumulated_reward: msg.accumulated_reward,
                update_counter: msg.update_counter,
                wall_step: msg.wall_step,
            },
        );
        Ok(())
    }

    pub fn peers(&self) -> impl Iterator<Item = (&AgentId, &PeerKnowledge)> {
        self.peers.iter()
    }

    pub fn get(&self, id: AgentId) -> Option<&PeerKnowledge> {
        self.peers.get(&id)
    }

    /// Peers plus the owner.
    pub fn member_count(&self) -> usize {
        self.peers.len() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadKind;

    fn msg(sender: u16, counter: u64, dims: &[usize]) -> KnowledgeMessage {
        let model = MlpModel::zeros(dims, HeadKind::SoftmaxPolicy).unwrap();
        KnowledgeMessage {
            sender: AgentId(sender),
            update_counter: counter,
            wall_step: counter * 10,
            accumulated_reward: Some(counter as f64),
            policy: snapshot::serialize(&model),
            value: None,
        }
    }

    #[test]
    fn bus_delivers_to_everyone_else() {
        let bus = GroupBus::new(3);
        bus.publish(msg(0, 1, &[2, 2]));
        assert!(bus.drain(AgentId(0)).is_empty());
        assert_eq!(bus.drain(AgentId(1)).len(), 1);
        assert_eq!(bus.drain(AgentId(2)).len(), 1);
        // Drained: second read is empty.
        assert!(bus.drain(AgentId(1)).is_empty());
    }

    #[test]
    fn bus_keeps_only_the_latest_per_sender() {
        let bus = GroupBus::new(2);
        bus.publish(msg(0, 1, &[2, 2]));
        bus.publish(msg(0, 3, &[2, 2]));
        bus.publish(msg(0, 2, &[2, 2])); // stale, discarded
        let got = bus.drain(AgentId(1));
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].update_counter, 3);
    }

    #[test]
    fn fresh_policy_set_has_only_the_owner() {
        let set = PolicySet::new(AgentId(0), vec![2, 2]);
        assert_eq!(set.member_count(), 1);
        assert_eq!(set.peers().count(), 0);
    }

    #[test]
    fn ingest_latest_wins_and_stale_dropped() {
        let mut set = PolicySet::new(AgentId(0), vec![2, 2]);
        set.ingest(msg(1, 2, &[2, 2])).unwrap();
        set.ingest(msg(1, 1, &[2, 2])).unwrap(); // stale: no-op
        assert_eq!(set.get(AgentId(1)).unwrap().update_counter, 2);
        set.ingest(msg(1, 5, &[2, 2])).unwrap();
        assert_eq!(set.get(AgentId(1)).unwrap().update_counter, 5);
    }

    #[test]
    fn mismatched_architecture_rejected_without_change() {
        let mut set = PolicySet::new(AgentId(0), vec![2, 2]);
        set.ingest(msg(1, 1, &[2, 2])).unwrap();
        let err = set.ingest(msg(1, 9, &[3, 2])).unwrap_err();
        assert!(matches!(err, GroupError::ArchitectureMismatch { .. }));
        assert_eq!(set.get(AgentId(1)).unwrap().update_counter, 1);
    }

    #[test]
    fn corrupt_snapshot_rejected() {
        let mut set = PolicySet::new(AgentId(0), vec![2, 2]);
        let mut m = msg(1, 1, &[2, 2]);
        m.policy[0] = b'X';
        assert!(matches!(
            set.ingest(m),
            Err(GroupError::BadSnapshot { .. })
        ));
    }
}
