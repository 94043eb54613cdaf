//! Model adoption: when a batch of selections says a peer knows better,
//! take its parameters wholesale.
//!
//! At each batch boundary under the Combo rule, agent `i` checks whether
//! some peer `k` satisfies all three conditions over the batch of `N`
//! selections:
//!
//! 1. `k`'s usage count ranks first among every source (a unique
//!    maximum; ties fail closed);
//! 2. the count reaches at least half the batch (`2 * count >= N`, exact
//!    integer arithmetic);
//! 3. `k`'s accumulated reward score is the strict maximum of the group
//!    (unscored agents compare as minus infinity).
//!
//! At most one peer can satisfy condition 3, so the decision is
//! unambiguous. Adoption replaces the policy unconditionally and the
//! value model only when the head shapes match (a state-value learner
//! cannot take an action-value critic or vice versa). The adopter keeps
//! its own reward history.

use crate::AgentId;
use std::collections::BTreeMap;

/// Condition-by-condition outcome for one candidate peer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdoptionConditions {
    pub ranks_first: bool,
    pub majority: bool,
    pub ar_strict_max: bool,
}

impl AdoptionConditions {
    pub fn all(&self) -> bool {
        self.ranks_first && self.majority && self.ar_strict_max
    }
}

/// Evaluate the three conditions for peer `k`.
pub fn conditions_for(
    owner: AgentId,
    k: AgentId,
    usage: &BTreeMap<AgentId, u64>,
    ar_table: &BTreeMap<AgentId, Option<f64>>,
    batch_size: u64,
) -> AdoptionConditions {
    let count = usage.get(&k).copied().unwrap_or(0);
    let ranks_first = k != owner
        && usage
            .iter()
            .all(|(id, c)| *id == k || count > *c);
    let majority = 2 * count >= batch_size && count > 0;
    let k_ar = ar_table.get(&k).copied().flatten();
    let ar_strict_max = match k_ar {
        None => false,
        Some(ar) => ar_table
            .iter()
            .all(|(id, other)| *id == k || other.map_or(true, |o| ar > o)),
    };
    AdoptionConditions {
        ranks_first,
        majority,
        ar_strict_max,
    }
}

/// The peer to adopt from, if any: the unique `k != owner` passing all
/// three conditions.
pub fn adoption_candidate(
    owner: AgentId,
    usage: &BTreeMap<AgentId, u64>,
    ar_table: &BTreeMap<AgentId, Option<f64>>,
    batch_size: u64,
) -> Option<AgentId> {
    usage
        .keys()
        .filter(|id| **id != owner)
        .find(|id| conditions_for(owner, **id, usage, ar_table, batch_size).all())
        .copied()
}
