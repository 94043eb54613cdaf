//! The three action selection rules.
//!
//! Probability addition (PA) sums the members' action-probability
//! vectors and takes the argmax; probability multiplication (PM) does
//! the same with the elementwise product, computed in log space.
//!
//! The Combo rule filters harder before borrowing an action:
//!
//! 1. keep only peers whose accumulated reward score beats the owner's;
//! 2. probe each survivor's greedy action one step ahead (snapshot,
//!    step, read the next state, restore), score it with that peer's
//!    value model, accumulate the scores over the current batch, and
//!    pick the peer with the highest accumulated next-state value;
//! 3. accept the winner's action only when its negative log likelihood
//!    under the winner's own policy stays below the threshold phi,
//!    otherwise keep the owner's sampled action.
//!
//! Ties break to the lowest action index and the lowest agent id
//! everywhere. Selections are attributed per source for the usage
//! counters that drive model adoption.

use super::{GroupError, PolicySet};
use crate::env::Environment;
use crate::learner::{ModelOutputs, ValueEstimate};
use crate::AgentId;
use std::collections::BTreeMap;

/// Who supplied the applied action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionSource {
    /// A specific member's prediction (Combo), or the owner itself.
    Agent(AgentId),
    /// The joint decision of the whole set (PA and PM).
    Joint,
}

/// The chosen action with its attribution and, for Combo, the full
/// filter diagnostics.
#[derive(Debug, Clone)]
pub struct SelectionDecision {
    pub action: usize,
    pub source: SelectionSource,
    pub combo: Option<ComboDiagnostics>,
}

/// What Combo saw when it decided: enough to audit both filters.
#[derive(Debug, Clone)]
pub struct ComboDiagnostics {
    pub owner_ar: Option<f64>,
    /// Peers that passed the reward filter, in id order.
    pub candidates: Vec<AgentId>,
    /// Accumulated next-state value per current candidate.
    pub v_acc: Vec<(AgentId, f64)>,
    /// The value-argmax peer, its greedy action, its AR, and the NLL of
    /// that action under its own policy.
    pub winner: Option<ComboWinner>,
    pub phi: f64,
    /// Lookahead transitions probed (all rolled back).
    pub lookahead_steps: u64,
}

#[derive(Debug, Clone)]
pub struct ComboWinner {
    pub agent: AgentId,
    pub action: usize,
    pub accumulated_reward: f64,
    pub nll: f64,
    pub accepted: bool,
}

/// Per-batch Combo bookkeeping: accumulated next-state values and the
/// per-source usage counts, both reset when the owner's batch is
/// consumed.
#[derive(Debug, Clone)]
pub struct ComboState {
    pub phi: f64,
    v_acc: BTreeMap<AgentId, f64>,
    usage: BTreeMap<AgentId, u64>,
    steps_in_batch: u64,
}

impl ComboState {
    pub fn new(phi: f64) -> Self {
        assert!(phi > 0.0, "phi must be positive");
        Self {
            phi,
            v_acc: BTreeMap::new(),
            usage: BTreeMap::new(),
            steps_in_batch: 0,
        }
    }

    /// Reset at a batch boundary.
    pub fn reset(&mut self) {
        self.v_acc.clear();
        self.usage.clear();
        self.steps_in_batch = 0;
    }

    pub fn usage(&self) -> &BTreeMap<AgentId, u64> {
        &self.usage
    }

    pub fn steps_in_batch(&self) -> u64 {
        self.steps_in_batch
    }

    pub fn note_selection(&mut self, source: AgentId) {
        *self.usage.entry(source).or_insert(0) += 1;
        self.steps_in_batch += 1;
    }
}

fn argmax_probs(map: &BTreeMap<AgentId, Vec<f64>>, combine: impl Fn(&mut [f64], &[f64])) -> usize {
    let mut iter = map.values();
    let mut acc = iter.next().expect("nonempty policy set").clone();
    for probs in iter {
        combine(&mut acc, probs);
    }
    crate::nn::argmax(&acc)
}

/// Probability addition: argmax of the summed probability vectors.
pub fn rule_pa(member_probs: &BTreeMap<AgentId, Vec<f64>>) -> SelectionDecision {
    let action = argmax_probs(member_probs, |acc, p| {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    });
    SelectionDecision {
        action,
        source: SelectionSource::Joint,
        combo: None,
    }
}

/// Probability floor applied before taking logarithms in PM.
pub const PM_PROB_FLOOR: f64 = 1e-12;

/// Probability multiplication: argmax of the elementwise product,
/// computed as a sum of logs with probabilities floored at
/// [`PM_PROB_FLOOR`].
pub fn rule_pm(member_probs: &BTreeMap<AgentId, Vec<f64>>) -> SelectionDecision {
    let mut iter = member_probs.values();
    let first = iter.next().expect("nonempty policy set");
    let mut acc: Vec<f64> = first.iter().map(|p| p.max(PM_PROB_FLOOR).ln()).collect();
    for probs in iter {
        for (a, p) in acc.iter_mut().zip(probs) {
            *a += p.max(PM_PROB_FLOOR).ln();
        }
    }
    SelectionDecision {
        action: crate::nn::argmax(&acc),
        source: SelectionSource::Joint,
        combo: None,
    }
}

/// The Combo rule for one time step. `member_outputs` holds every
/// member's predictions at the current state (owner included); the
/// environment is only used for snapshot lookahead and is restored
/// before returning. Usage counters in `state` are updated with the
/// final attribution.
#[allow(clippy::too_many_arguments)]
pub fn rule_combo<E: Environment>(
    owner: AgentId,
    own_action: usize,
    member_outputs: &BTreeMap<AgentId, ModelOutputs>,
    ar_table: &BTreeMap<AgentId, Option<f64>>,
    peers: &PolicySet,
    env: &mut E,
    state: &mut ComboState,
) -> Result<SelectionDecision, GroupError> {
    let owner_ar = ar_table.get(&owner).copied().flatten();
    // Step 1: peers with strictly higher accumulated reward. An unscored
    // agent compares as minus infinity on either side.
    let mut candidates: Vec<(AgentId, f64)> = Vec::new();
    for (id, ar) in ar_table {
        if *id == owner {
            continue;
        }
        if let Some(ar) = ar {
            if owner_ar.map_or(true, |own| *ar > own) {
                candidates.push((*id, *ar));
            }
        }
    }

    let mut diagnostics = ComboDiagnostics {
        owner_ar,
        candidates: candidates.iter().map(|(id, _)| *id).collect(),
        v_acc: Vec::new(),
        winner: None,
        phi: state.phi,
        lookahead_steps: 0,
    };

    // Step 2: probe each candidate's greedy action one step ahead and
    // score the landing state with the candidate's own value model.
    let mut evaluated: Vec<(AgentId, usize, f64)> = Vec::new(); // id, action, v_acc
    if !candidates.is_empty() {
        let snap = env.snapshot();
        for (id, _) in &candidates {
            let Some(peer) = peers.get(*id) else { continue };
            let Some(value_model) = peer.value.as_ref() else {
                // Value message never arrived; candidate unusable this step.
                continue;
            };
            let Some(outputs) = member_outputs.get(id) else { continue };
            let greedy = crate::nn::argmax(&outputs.probs);
            let step = env
                .step(greedy)
                .map_err(|e| GroupError::Lookahead(e.to_string()))?;
            env.restore(&snap);
            diagnostics.lookahead_steps += 1;
            let v_next = peer_state_value(peer, value_model, &step.observation)?;
            let acc = state.v_acc.entry(*id).or_insert(0.0);
            *acc += v_next;
            evaluated.push((*id, greedy, *acc));
        }
    }
    diagnostics.v_acc = evaluated.iter().map(|(id, _, v)| (*id, *v)).collect();

    // Highest accumulated value; ties to the lowest agent id (the
    // ascending scan with a strict `>` does exactly that).
    let mut winner: Option<(AgentId, usize, f64)> = None;
    for (id, action, v) in &evaluated {
        if winner.map_or(true, |(_, _, best)| *v > best) {
            winner = Some((*id, *action, *v));
        }
    }

    let decision = match winner {
        None => SelectionDecision {
            action: own_action,
            source: SelectionSource::Agent(owner),
            combo: None,
        },
        Some((id, action, _)) => {
            // Step 3: confidence gate on the winner's own probability.
            let outputs = &member_outputs[&id];
            let nll = -outputs.probs[action].max(f64::MIN_POSITIVE).ln();
            let accepted = nll < state.phi;
            diagnostics.winner = Some(ComboWinner {
                agent: id,
                action,
                accumulated_reward: ar_table[&id].expect("candidates are scored"),
                nll,
                accepted,
            });
            if accepted {
                SelectionDecision {
                    action,
                    source: SelectionSource::Agent(id),
                    combo: None,
                }
            } else {
                SelectionDecision {
                    action: own_action,
                    source: SelectionSource::Agent(owner),
                    combo: None,
                }
            }
        }
    };

    let source = match decision.source {
        SelectionSource::Agent(id) => id,
        SelectionSource::Joint => unreachable!("combo always attributes an agent"),
    };
    state.note_selection(source);
    Ok(SelectionDecision {
        combo: Some(diagnostics),
        ..decision
    })
}

/// A peer's state value at an observation: its V-head output, or the
/// pi-weighted sum of its Q-head outputs using its own policy.
fn peer_state_value(
    peer: &super::PeerKnowledge,
    value_model: &crate::nn::MlpModel,
    observation: &[f64],
) -> Result<f64, GroupError> {
    let values = value_model
        .values(observation)
        .map_err(|e| GroupError::Lookahead(e.to_string()))?;
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let dist = peer
        .policy
        .policy(observation)
        .map_err(|e| GroupError::Lookahead(e.to_string()))?;
    let estimate = ValueEstimate::Action(values);
    Ok(estimate.state_value(&dist.probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, GridWorld};
    use crate::group::KnowledgeMessage;
    use crate::nn::{snapshot, HeadKind, MlpModel};

    fn probs_map(entries: &[(u16, &[f64])]) -> BTreeMap<AgentId, Vec<f64>> {
        entries
            .iter()
            .map(|(id, p)| (AgentId(*id), p.to_vec()))
            .collect()
    }

    #[test]
    fn pa_hand_sum() {
        let m = probs_map(&[(0, &[0.6, 0.4]), (1, &[0.1, 0.9])]);
        assert_eq!(rule_pa(&m).action, 1); // sums [0.7, 1.3]
    }

    #[test]
    fn pa_uniform_ties_break_low() {
        let u = [1.0 / 3.0; 3];
        let m = probs_map(&[(0, &u), (1, &u)]);
        let d = rule_pa(&m);
        assert_eq!(d.action, 0);
        assert_eq!(d.source, SelectionSource::Joint);
    }

    #[test]
    fn pa_single_member_is_own_argmax() {
        let m = probs_map(&[(2, &[0.2, 0.5, 0.3])]);
        assert_eq!(rule_pa(&m).action, 1);
    }

    #[test]
    fn pm_hand_product() {
        let m = probs_map(&[(0, &[0.5, 0.5]), (1, &[0.9, 0.1])]);
        assert_eq!(rule_pm(&m).action, 0); // products [0.45, 0.05]
    }

    #[test]
    fn pm_one_hot_dominates_when_elsewhere_nonzero() {
        let m = probs_map(&[(0, &[1.0 - 1e-9, 1e-9]), (1, &[0.4, 0.6])]);
        assert_eq!(rule_pm(&m).action, 0);
    }

    #[test]
    fn pm_all_uniform_ties_break_low() {
        let u = [0.25; 4];
        let m = probs_map(&[(0, &u), (1, &u), (2, &u)]);
        assert_eq!(rule_pm(&m).action, 0);
    }

    #[test]
    fn pm_matches_direct_product_when_probs_not_tiny() {
        let mut rng = crate::rng::SplitMix64::new(0xF00);
        for _ in 0..1000 {
            let mut m = BTreeMap::new();
            let members = 2 + rng.next_below(3) as u16;
            let actions = 2 + rng.next_below(4) as usize;
            for id in 0..members {
                let raw: Vec<f64> = (0..actions).map(|_| rng.next_range(1e-6, 1.0)).collect();
                let sum: f64 = raw.iter().sum();
                m.insert(AgentId(id), raw.iter().map(|x| x / sum).collect::<Vec<_>>());
            }
            let direct = {
                let mut acc = vec![1.0; actions];
                for p in m.values() {
                    for (a, b) in acc.iter_mut().zip(p) {
                        *a *= b;
                    }
                }
                crate::nn::argmax(&acc)
            };
            assert_eq!(rule_pm(&m).action, direct);
        }
    }

    #[test]
    fn rescaling_all_members_keeps_the_choice() {
        let mut rng = crate::rng::SplitMix64::new(0xA5);
        for _ in 0..200 {
            let mut m = BTreeMap::new();
            for id in 0..3u16 {
                let raw: Vec<f64> = (0..4).map(|_| rng.next_range(0.01, 1.0)).collect();
                m.insert(AgentId(id), raw);
            }
            let scale = rng.next_range(0.1, 5.0);
            let scaled: BTreeMap<AgentId, Vec<f64>> = m
                .iter()
                .map(|(id, p)| (*id, p.iter().map(|x| x * scale).collect()))
                .collect();
            assert_eq!(rule_pa(&m).action, rule_pa(&scaled).action);
            assert_eq!(rule_pm(&m).action, rule_pm(&scaled).action);
        }
    }

    // Combo fixtures: a peer whose policy is a fixed softmax bias and
    // whose value model returns a constant per state.
    fn constant_policy(n_obs: usize, logits: &[f64]) -> MlpModel {
        let mut m = MlpModel::zeros(&[n_obs, logits.len()], HeadKind::SoftmaxPolicy).unwrap();
        let mut params = vec![0.0f32; m.param_count()];
        let weight_count = n_obs * logits.len();
        for (i, l) in logits.iter().enumerate() {
            params[weight_count + i] = *l as f32;
        }
        m.set_flat_params(&params).unwrap();
        m
    }

    fn constant_value(n_obs: usize, v: f64) -> MlpModel {
        let mut m = MlpModel::zeros(&[n_obs, 1], HeadKind::LinearValue).unwrap();
        let mut params = vec![0.0f32; m.param_count()];
        *params.last_mut().unwrap() = v as f32;
        m.set_flat_params(&params).unwrap();
        m
    }

    fn peer_message(id: u16, policy: &MlpModel, value: Option<&MlpModel>, ar: f64) -> KnowledgeMessage {
        KnowledgeMessage {
            sender: AgentId(id),
            update_counter: 1,
            wall_step: 0,
            accumulated_reward: Some(ar),
            policy: snapshot::serialize(policy),
            value: value.map(snapshot::serialize),
        }
    }

    struct ComboFixture {
        env: GridWorld,
        peers: PolicySet,
        outputs: BTreeMap<AgentId, ModelOutputs>,
        ar: BTreeMap<AgentId, Option<f64>>,
        state: ComboState,
    }

    /// Owner 0 on a 4x4 grid (16 obs dims, 4 actions) with two peers.
    fn fixture(owner_ar: Option<f64>, peer_ars: &[(u16, f64, &[f64], f64)]) -> ComboFixture {
        let mut env = GridWorld::square(4, 60);
        env.reset(3);
        let mut peers = PolicySet::new(AgentId(0), vec![16, 4]);
        let mut outputs = BTreeMap::new();
        let mut ar = BTreeMap::new();
        outputs.insert(
            AgentId(0),
            ModelOutputs {
                probs: vec![0.25; 4],
                value: Some(crate::learner::ValueEstimate::State(0.0)),
            },
        );
        ar.insert(AgentId(0), owner_ar);
        for (id, peer_ar, probs, value) in peer_ars {
            let logits: Vec<f64> = probs.iter().map(|p| p.max(1e-9).ln()).collect();
            let policy = constant_policy(16, &logits);
            let value_model = constant_value(16, *value);
            peers
                .ingest(peer_message(*id, &policy, Some(&value_model), *peer_ar))
                .unwrap();
            let dist = policy.policy(&[0.0; 16]).unwrap();
            outputs.insert(
                AgentId(*id),
                ModelOutputs {
                    probs: dist.probs,
                    value: Some(crate::learner::ValueEstimate::State(*value)),
                },
            );
            ar.insert(AgentId(*id), Some(*peer_ar));
        }
        // phi for four actions at the default 0.8 fraction.
        let state = ComboState::new(0.8 * (4.0f64).ln());
        ComboFixture {
            env,
            peers,
            outputs,
            ar,
            state,
        }
    }

    #[test]
    fn combo_adopts_confident_higher_scored_peer() {
        // Owner AR 10; peers at 5 (filtered out) and 20 predicting action
        // 1 with probability 0.9: NLL ~ 0.105 < phi ~ 1.109 -> adopt.
        let mut fx = fixture(
            Some(10.0),
            &[
                (1, 5.0, &[0.9, 0.05, 0.03, 0.02], 1.0),
                (2, 20.0, &[0.05, 0.9, 0.03, 0.02], 1.0),
            ],
        );
        let d = rule_combo(
            AgentId(0),
            3,
            &fx.outputs,
            &fx.ar,
            &fx.peers,
            &mut fx.env,
            &mut fx.state,
        )
        .unwrap();
        assert_eq!(d.source, SelectionSource::Agent(AgentId(2)));
        assert_eq!(d.action, 1);
        let diag = d.combo.unwrap();
        assert_eq!(diag.candidates, vec![AgentId(2)]);
        // Logits live in f32 storage, so the softmax lands within f32
        // precision of the requested 0.9.
        let w = diag.winner.unwrap();
        assert!((w.nll - 0.10536051565782628).abs() < 1e-6);
        assert!((diag.phi - 1.1090354888959124).abs() < 1e-12);
        assert!(w.accepted);
        assert_eq!(fx.state.usage()[&AgentId(2)], 1);
    }

    #[test]
    fn combo_empty_filter_keeps_own_action() {
        let mut fx = fixture(
            Some(30.0),
            &[(1, 5.0, &[0.9, 0.05, 0.03, 0.02], 1.0)],
        );
        let d = rule_combo(
            AgentId(0),
            2,
            &fx.outputs,
            &fx.ar,
            &fx.peers,
            &mut fx.env,
            &mut fx.state,
        )
        .unwrap();
        assert_eq!(d.action, 2);
        assert_eq!(d.source, SelectionSource::Agent(AgentId(0)));
        assert_eq!(fx.state.usage()[&AgentId(0)], 1);
        assert_eq!(d.combo.unwrap().lookahead_steps, 0);
    }

    #[test]
    fn combo_rejects_uniform_winner_by_threshold() {
        // Winner predicts uniformly: NLL = ln 4 >= phi = 0.8 ln 4.
        let mut fx = fixture(Some(1.0), &[(1, 9.0, &[0.25, 0.25, 0.25, 0.25], 2.0)]);
        let d = rule_combo(
            AgentId(0),
            3,
            &fx.outputs,
            &fx.ar,
            &fx.peers,
            &mut fx.env,
            &mut fx.state,
        )
        .unwrap();
        assert_eq!(d.action, 3);
        assert_eq!(d.source, SelectionSource::Agent(AgentId(0)));
        let w = d.combo.unwrap().winner.unwrap();
        assert!(!w.accepted);
        assert!(w.nll >= fx.state.phi);
    }

    #[test]
    fn combo_unscored_owner_considers_all_scored_peers() {
        let mut fx = fixture(None, &[(1, 0.5, &[0.9, 0.05, 0.03, 0.02], 1.0)]);
        let d = rule_combo(
            AgentId(0),
            0,
            &fx.outputs,
            &fx.ar,
            &fx.peers,
            &mut fx.env,
            &mut fx.state,
        )
        .unwrap();
        assert_eq!(d.source, SelectionSource::Agent(AgentId(1)));
    }

    #[test]
    fn combo_value_argmax_picks_higher_accumulated_peer() {
        // Both peers beat the owner; peer 2's value model scores higher,
        // and its action is confident, so it wins.
        let mut fx = fixture(
            Some(0.0),
            &[
                (1, 5.0, &[0.9, 0.05, 0.03, 0.02], 1.0),
                (2, 6.0, &[0.05, 0.9, 0.03, 0.02], 3.0),
            ],
        );
        let d = rule_combo(
            AgentId(0),
            3,
            &fx.outputs,
            &fx.ar,
            &fx.peers,
            &mut fx.env,
            &mut fx.state,
        )
        .unwrap();
        assert_eq!(d.source, SelectionSource::Agent(AgentId(2)));
        let diag = d.combo.unwrap();
        assert_eq!(diag.lookahead_steps, 2);
        assert_eq!(diag.v_acc.len(), 2);
    }

    #[test]
    fn combo_accumulates_values_within_batch_and_resets() {
        let mut fx = fixture(Some(0.0), &[(1, 5.0, &[0.9, 0.05, 0.03, 0.02], 2.0)]);
        for i in 1..=3u64 {
            let d = rule_combo(
                AgentId(0),
                0,
                &fx.outputs,
                &fx.ar,
                &fx.peers,
                &mut fx.env,
                &mut fx.state,
            )
            .unwrap();
            let diag = d.combo.unwrap();
            assert!((diag.v_acc[0].1 - 2.0 * i as f64).abs() < 1e-9);
        }
        assert_eq!(fx.state.steps_in_batch(), 3);
        fx.state.reset();
        assert_eq!(fx.state.steps_in_batch(), 0);
        assert!(fx.state.usage().is_empty());
    }

    #[test]
    fn combo_lookahead_restores_the_environment() {
        let mut fx = fixture(
            Some(0.0),
            &[
                (1, 5.0, &[0.9, 0.05, 0.03, 0.02], 1.0),
                (2, 6.0, &[0.05, 0.9, 0.03, 0.02], 3.0),
            ],
        );
        let before = fx.env.transitions();
        let pos = fx.env.position();
        rule_combo(
            AgentId(0),
            0,
            &fx.outputs,
            &fx.ar,
            &fx.peers,
            &mut fx.env,
            &mut fx.state,
        )
        .unwrap();
        assert_eq!(fx.env.transitions(), before);
        assert_eq!(fx.env.position(), pos);
    }

    #[test]
    fn combo_skips_candidate_without_value_model() {
        let mut env = GridWorld::square(4, 60);
        env.reset(3);
        let mut peers = PolicySet::new(AgentId(0), vec![16, 4]);
        let policy = constant_policy(16, &[2.0, 0.0, 0.0, 0.0]);
        peers
            .ingest(peer_message(1, &policy, None, 9.0))
            .unwrap();
        let mut outputs = BTreeMap::new();
        outputs.insert(
            AgentId(0),
            ModelOutputs { probs: vec![0.25; 4], value: None },
        );
        outputs.insert(
            AgentId(1),
            ModelOutputs {
                probs: policy.policy(&[0.0; 16]).unwrap().probs,
                value: None,
            },
        );
        let mut ar = BTreeMap::new();
        ar.insert(AgentId(0), Some(1.0));
        ar.insert(AgentId(1), Some(9.0));
        let mut state = ComboState::new(1.0);
        let d = rule_combo(AgentId(0), 2, &outputs, &ar, &peers, &mut env, &mut state).unwrap();
        // Candidate passed the AR filter but could not be evaluated.
        assert_eq!(d.source, SelectionSource::Agent(AgentId(0)));
        let diag = d.combo.unwrap();
        assert_eq!(diag.candidates, vec![AgentId(1)]);
        assert!(diag.v_acc.is_empty());
    }
}
