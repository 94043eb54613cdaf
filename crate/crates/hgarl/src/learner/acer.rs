//! Actor-critic with experience replay.
//!
//! The critic is an action-value net trained toward Retrace targets:
//!
//! ```text
//! Qret(s_t, a_t) = R_t + gamma * V(s_{t+1})
//!                + gamma * min(c, rho_{t+1}) * (Qret(s_{t+1}, a_{t+1}) - Q(s_{t+1}, a_{t+1}))
//! ```
//!
//! with `rho_t = pi(a_t|s_t) / mu(a_t|s_t)`, zero bootstrap and zero
//! correction at terminals, and `Qret = R + gamma * V(s_end+1)` at the
//! end of a sampled segment. The state value is derived from the critic
//! by `V(s) = sum_a pi(a|s) * Q(s,a)`.
//!
//! The actor uses truncated importance weights with a bias-correction
//! sum over off-policy-heavy actions: for the taken action the weight is
//! `min(c, rho_t) * (Qret - V)`; every action additionally contributes
//! `max(0, 1 - c/rho_t(a)) * pi(a|s) * (Q(s,a) - V)` on its log
//! probability. All weights are constants with respect to the policy
//! parameters.

use super::batch::StepRecord;
use super::replay::{ReplayBuffer, StoredBatch, StoredStep};
use super::{
    model_err, ActStep, Core, ExportedModels, Learner, LearnerError, ModelOutputs, ObsAction,
    UpdateDiagnostics, ValueEstimate,
};
use crate::env::EnvSpec;
use crate::learner::config::{Algorithm, LearnerConfig};
use crate::nn::MlpModel;
use crate::rng::SplitMix64;
use crate::AgentId;

/// Raw ingredients of the Retrace recursion for one contiguous segment.
#[derive(Debug, Clone)]
pub struct RetraceSegment<'a> {
    pub rewards: &'a [f64],
    /// True when s_{t+1} is terminal.
    pub terminals: &'a [bool],
    /// rho_t at the taken action.
    pub rho_taken: &'a [f64],
    /// Current critic estimate Q(s_t, a_t).
    pub q_taken: &'a [f64],
    /// Current V(s_{t+1}); ignored where terminal.
    pub v_next: &'a [f64],
}

/// Backward-recursion Retrace targets over a segment that may contain
/// episode seams (terminal flags reset the recursion).
pub fn retrace_targets(seg: &RetraceSegment, gamma: f64, c: f64) -> Vec<f64> {
    let n = seg.rewards.len();
    let mut out = vec![0.0; n];
    for t in (0..n).rev() {
        if seg.terminals[t] {
            out[t] = seg.rewards[t];
            continue;
        }
        let mut q = seg.rewards[t] + gamma * seg.v_next[t];
        if t + 1 < n {
            let rho_bar = c.min(seg.rho_taken[t + 1]);
            q += gamma * rho_bar * (out[t + 1] - seg.q_taken[t + 1]);
        }
        out[t] = q;
    }
    out
}

/// Network-level Retrace targets: evaluates the current policy and
/// critic on the stored transitions and runs the recursion.
pub fn retrace_targets_for(
    steps: &[StoredStep],
    policy: &MlpModel,
    q_net: &MlpModel,
    gamma: f64,
    c: f64,
) -> Result<Vec<f64>, LearnerError> {
    let eval = evaluate_steps(steps, policy, q_net)?;
    let seg = RetraceSegment {
        rewards: &eval.rewards,
        terminals: &eval.terminals,
        rho_taken: &eval.rho_taken,
        q_taken: &eval.q_taken,
        v_next: &eval.v_next,
    };
    Ok(retrace_targets(&seg, gamma, c))
}

/// Per-step quantities shared by the critic targets and actor weights.
struct StepEval {
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    rho_taken: Vec<f64>,
    rho_all: Vec<Vec<f64>>,
    q_taken: Vec<f64>,
    q_all: Vec<Vec<f64>>,
    v: Vec<f64>,
    v_next: Vec<f64>,
}

fn evaluate_steps(
    steps: &[StoredStep],
    policy: &MlpModel,
    q_net: &MlpModel,
) -> Result<StepEval, LearnerError> {
    let n = steps.len();
    let mut eval = StepEval {
        rewards: Vec::with_capacity(n),
        terminals: Vec::with_capacity(n),
        rho_taken: Vec::with_capacity(n),
        rho_all: Vec::with_capacity(n),
        q_taken: Vec::with_capacity(n),
        q_all: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        v_next: Vec::with_capacity(n),
    };
    for (t, s) in steps.iter().enumerate() {
        let dist = policy.policy(&s.obs).map_err(model_err)?;
        let q = q_net.values(&s.obs).map_err(model_err)?;
        let v: f64 = dist.probs.iter().zip(&q).map(|(p, q)| p * q).sum();
        let mu_taken = s.mu[s.action];
        if mu_taken <= 0.0 {
            return Err(LearnerError::DataIntegrity {
                context: format!(
                    "behavior probability mu(a|s) = {mu_taken} at step {t} must be positive"
                ),
            });
        }
        let rho_all: Vec<f64> = dist
            .probs
            .iter()
            .zip(&s.mu)
            .map(|(p, m)| if *m > 0.0 { p / m } else { f64::INFINITY })
            .collect();
        let v_next = if s.terminal {
            0.0
        } else {
            let next_dist = policy.policy(&s.next_obs).map_err(model_err)?;
            let next_q = q_net.values(&s.next_obs).map_err(model_err)?;
            next_dist.probs.iter().zip(&next_q).map(|(p, q)| p * q).sum()
        };
        eval.rewards.push(s.reward);
        eval.terminals.push(s.terminal);
        eval.rho_taken.push(rho_all[s.action]);
        eval.q_taken.push(q[s.action]);
        eval.rho_all.push(rho_all);
        eval.q_all.push(q);
        eval.v.push(v);
        eval.v_next.push(v_next);
    }
    Ok(eval)
}

/// Truncated importance weight for the taken action.
pub fn truncated_weight(rho: f64, c: f64) -> f64 {
    c.min(rho)
}

/// Bias-correction weight for one action.
pub fn correction_weight(rho: f64, c: f64) -> f64 {
    (1.0 - c / rho).max(0.0)
}

/// Actor loss with all weights constant:
/// `-mean(w_t * ln pi(a_t) + sum_a bias[t][a] * ln pi(a) + entropy_coef * H)`
/// where `bias[t][a]` already carries the pi(a|s) factor. Returns (loss,
/// gradient, mean entropy).
pub fn actor_loss_grad(
    policy: &MlpModel,
    steps: &[ObsAction],
    taken_weights: &[f64],
    bias_weights: &[Vec<f64>],
    entropy_coef: f64,
) -> Result<(f64, Vec<f64>, f64), LearnerError> {
    let n = steps.len() as f64;
    let n_actions = policy.output_dim();
    let mut loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut grad = vec![0.0; policy.param_count()];
    for ((step, w), bias) in steps.iter().zip(taken_weights).zip(bias_weights) {
        let dist = policy.policy(step.obs).map_err(model_err)?;
        let h = dist.entropy();
        entropy_sum += h;
        let mut objective = w * dist.log_probs[step.action] + entropy_coef * h;
        let mut upstream = vec![0.0; n_actions];
        for j in 0..n_actions {
            objective += bias[j] * dist.log_probs[j];
            // d(-obj)/dp_j, with ln p terms differentiating to 1/p.
            upstream[j] = (entropy_coef * (dist.log_probs[j] + 1.0) - bias[j] / dist.probs[j]) / n;
        }
        upstream[step.action] -= w / dist.probs[step.action] / n;
        loss -= objective / n;
        let g = policy.backward(step.obs, &upstream).map_err(model_err)?;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((loss, grad, entropy_sum / n))
}

/// Critic loss `value_coef * mean(0.5 * (Q(s_t,a_t) - Qret_t)^2)`; its
/// gradient is the cited `(Q - Qret) * grad Q` direction.
pub fn critic_loss_grad(
    q_net: &MlpModel,
    steps: &[ObsAction],
    q_ret: &[f64],
    value_coef: f64,
) -> Result<(f64, Vec<f64>), LearnerError> {
    let n = steps.len() as f64;
    let n_actions = q_net.output_dim();
    let mut loss = 0.0;
    let mut grad = vec![0.0; q_net.param_count()];
    for (step, target) in steps.iter().zip(q_ret) {
        let q = q_net.values(step.obs).map_err(model_err)?;
        let err = q[step.action] - target;
        loss += value_coef * 0.5 * err * err / n;
        let mut upstream = vec![0.0; n_actions];
        upstream[step.action] = value_coef * err / n;
        let g = q_net.backward(step.obs, &upstream).map_err(model_err)?;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((loss, grad))
}

pub struct AcerLearner {
    core: Core,
    replay: ReplayBuffer,
}

impl AcerLearner {
    pub fn new(
        id: AgentId,
        cfg: LearnerConfig,
        spec: &EnvSpec,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        let replay_seed = SplitMix64::new(seed ^ 0xACE2).next_u64();
        let replay = ReplayBuffer::new(cfg.replay_capacity, replay_seed);
        Ok(Self {
            core: Core::new(id, cfg, spec, spec.action_count, seed)?,
            replay,
        })
    }

    /// One gradient update (actor + critic) on a stored batch.
    fn update_once(&mut self, batch: &StoredBatch) -> Result<(f64, f64, f64), LearnerError> {
        let cfg = self.core.cfg.clone();
        let eval = evaluate_steps(&batch.steps, &self.core.policy, &self.core.value)?;
        let seg = RetraceSegment {
            rewards: &eval.rewards,
            terminals: &eval.terminals,
            rho_taken: &eval.rho_taken,
            q_taken: &eval.q_taken,
            v_next: &eval.v_next,
        };
        let q_ret = retrace_targets(&seg, cfg.gamma, cfg.truncation_c);

        let mut taken_weights = Vec::with_capacity(batch.steps.len());
        let mut bias_weights = Vec::with_capacity(batch.steps.len());
        for (t, s) in batch.steps.iter().enumerate() {
            taken_weights
                .push(truncated_weight(eval.rho_taken[t], cfg.truncation_c) * (q_ret[t] - eval.v[t]));
            let dist = self.core.policy.policy(&s.obs).map_err(model_err)?;
            let bias: Vec<f64> = (0..dist.probs.len())
                .map(|j| {
                    correction_weight(eval.rho_all[t][j], cfg.truncation_c)
                        * dist.probs[j]
                        * (eval.q_all[t][j] - eval.v[t])
                })
                .collect();
            bias_weights.push(bias);
        }

        let views: Vec<ObsAction> = batch
            .steps
            .iter()
            .map(|s| ObsAction {
                obs: &s.obs,
                action: s.action,
            })
            .collect();
        let (policy_loss, policy_grad, entropy) = actor_loss_grad(
            &self.core.policy,
            &views,
            &taken_weights,
            &bias_weights,
            cfg.entropy_coef,
        )?;
        let (value_loss, value_grad) =
            critic_loss_grad(&self.core.value, &views, &q_ret, cfg.value_coef)?;
        self.core.apply_both(&policy_grad, &value_grad)?;
        Ok((policy_loss, value_loss, entropy))
    }
}

/// Resolve the behavior annotations of `source` into a stored batch.
fn annotate(
    steps: &[StepRecord],
    source: AgentId,
    own: AgentId,
) -> Result<StoredBatch, LearnerError> {
    let stored = steps
        .iter()
        .map(|s| {
            let mu = s.annotation_for(source, own).probs.clone();
            StoredStep {
                obs: s.obs.clone(),
                action: s.action,
                reward: s.reward,
                next_obs: s.next_obs.clone(),
                terminal: s.terminal,
                mu,
            }
        })
        .collect();
    Ok(StoredBatch { steps: stored })
}

impl Learner for AcerLearner {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Acer
    }

    fn id(&self) -> AgentId {
        self.core.id
    }

    fn act(&mut self, obs: &[f64]) -> ActStep {
        let dist = self.core.dist(obs);
        let action = dist.sample(&mut self.core.act_rng);
        let q = self.core.value.values(obs).expect("dims fixed at build");
        ActStep {
            action,
            outputs: ModelOutputs::from_policy(&dist, ValueEstimate::Action(q)),
        }
    }

    fn record_step(&mut self, rec: StepRecord) {
        self.core.batch.steps.push(rec);
    }

    fn buffered_steps(&self) -> usize {
        self.core.batch.len()
    }

    fn batch_size(&self) -> usize {
        self.core.cfg.batch_size
    }

    fn update(&mut self, source: AgentId) -> Result<UpdateDiagnostics, LearnerError> {
        if self.core.batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        let steps = std::mem::take(&mut self.core.batch.steps);
        let own = self.core.id;
        let fresh = match annotate(&steps, source, own) {
            Ok(f) => f,
            Err(e) => {
                self.core.batch.steps = steps;
                return Err(e);
            }
        };
        let result = (|| {
            let (policy_loss, value_loss, entropy) = self.update_once(&fresh)?;
            let mut diag = UpdateDiagnostics {
                policy_loss,
                value_loss,
                entropy,
                ..UpdateDiagnostics::default()
            };
            for _ in 0..self.core.cfg.replay_ratio {
                match self.replay.sample() {
                    Some(batch) => {
                        self.update_once(&batch)?;
                        diag.replay_updates += 1;
                    }
                    None => diag.replay_skipped += 1,
                }
            }
            self.replay.push(fresh.clone());
            Ok(diag)
        })();
        if result.is_err() {
            self.core.batch.steps = steps;
        }
        result
    }

    fn abort_batch(&mut self) {
        self.core.batch.steps.clear();
    }

    fn export_models(&self) -> ExportedModels {
        self.core.export()
    }

    fn import_models(
        &mut self,
        policy: &MlpModel,
        value: Option<&MlpModel>,
    ) -> Result<(), LearnerError> {
        self.core.import(policy, value)
    }
}
