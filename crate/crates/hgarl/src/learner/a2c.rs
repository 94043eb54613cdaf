//! Advantage actor-critic.
//!
//! One-step advantages: A(s_t, a_t) = Q(s_t, a_t) - V(s_t) with
//! Q(s_t, a_t) = r + gamma * V(s_{t+1}), and Q = r alone when s_{t+1} is
//! terminal. The policy ascends log pi(a_t|s_t) * A with the advantage
//! held constant; the value net descends the squared error against the
//! same bootstrap target; an entropy bonus weighs in at `entropy_coef`.

use super::batch::StepRecord;
use super::{
    model_err, value_mse_loss_grad, ActStep, Core, ExportedModels, Learner, LearnerError,
    ModelOutputs, ObsAction, UpdateDiagnostics, ValueEstimate,
};
use crate::env::EnvSpec;
use crate::learner::config::{Algorithm, LearnerConfig};
use crate::nn::MlpModel;
use crate::AgentId;

/// Bootstrap targets Q(s_t, a_t) = r + gamma * V(s_{t+1}), zero bootstrap
/// at terminals.
pub fn bootstrap_targets(
    steps: &[StepRecord],
    value_net: &MlpModel,
    gamma: f64,
) -> Result<Vec<f64>, LearnerError> {
    steps
        .iter()
        .map(|s| {
            let v_next = if s.terminal {
                0.0
            } else {
                value_net.values(&s.next_obs).map_err(model_err)?[0]
            };
            Ok(s.reward + gamma * v_next)
        })
        .collect()
}

/// One-step advantages A_t = Q(s_t, a_t) - V(s_t).
pub fn one_step_advantages(
    steps: &[StepRecord],
    value_net: &MlpModel,
    gamma: f64,
) -> Result<Vec<f64>, LearnerError> {
    let targets = bootstrap_targets(steps, value_net, gamma)?;
    steps
        .iter()
        .zip(targets)
        .map(|(s, q)| {
            let v = value_net.values(&s.obs).map_err(model_err)?[0];
            Ok(q - v)
        })
        .collect()
}

/// Policy loss `-mean(log pi(a_t|s_t) * A_t + entropy_coef * H_t)` with
/// the advantages treated as constants. Returns (loss, gradient, mean
/// entropy).
pub fn policy_loss_grad(
    policy: &MlpModel,
    steps: &[ObsAction],
    advantages: &[f64],
    entropy_coef: f64,
) -> Result<(f64, Vec<f64>, f64), LearnerError> {
    assert_eq!(steps.len(), advantages.len());
    let n = steps.len() as f64;
    let n_actions = policy.output_dim();
    let mut loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut grad = vec![0.0; policy.param_count()];
    for (step, adv) in steps.iter().zip(advantages) {
        let dist = policy.policy(step.obs).map_err(model_err)?;
        let a = step.action;
        let h = dist.entropy();
        entropy_sum += h;
        loss -= (dist.log_probs[a] * adv + entropy_coef * h) / n;
        // d(-J)/dp_j = -A * delta_{ja} / p_a + entropy_coef * (ln p_j + 1)
        let mut upstream = vec![0.0; n_actions];
        for (u, lp) in upstream.iter_mut().zip(&dist.log_probs) {
            *u = entropy_coef * (lp + 1.0) / n;
        }
        upstream[a] -= adv / dist.probs[a] / n;
        let g = policy.backward(step.obs, &upstream).map_err(model_err)?;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((loss, grad, entropy_sum / n))
}

pub struct A2cLearner {
    core: Core,
}

impl A2cLearner {
    pub fn new(
        id: AgentId,
        cfg: LearnerConfig,
        spec: &EnvSpec,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        Ok(Self {
            core: Core::new(id, cfg, spec, 1, seed)?,
        })
    }
}

impl Learner for A2cLearner {
    fn algorithm(&self) -> Algorithm {
        Algorithm::A2c
    }

    fn id(&self) -> AgentId {
        self.core.id
    }

    fn act(&mut self, obs: &[f64]) -> ActStep {
        let dist = self.core.dist(obs);
        let action = dist.sample(&mut self.core.act_rng);
        let v = self.core.value.values(obs).expect("dims fixed at build")[0];
        ActStep {
            action,
            outputs: ModelOutputs::from_policy(&dist, ValueEstimate::State(v)),
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

    fn update(&mut self, _source: AgentId) -> Result<UpdateDiagnostics, LearnerError> {
        if self.core.batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        let steps = std::mem::take(&mut self.core.batch.steps);
        let result = (|| {
            let gamma = self.core.cfg.gamma;
            let advantages = one_step_advantages(&steps, &self.core.value, gamma)?;
            let targets = bootstrap_targets(&steps, &self.core.value, gamma)?;
            let views = ObsAction::of(&steps);
            let (policy_loss, policy_grad, entropy) = policy_loss_grad(
                &self.core.policy,
                &views,
                &advantages,
                self.core.cfg.entropy_coef,
            )?;
            let observations: Vec<&[f64]> = steps.iter().map(|s| s.obs.as_slice()).collect();
            let (value_loss, value_grad) = value_mse_loss_grad(
                &self.core.value,
                &observations,
                &targets,
                self.core.cfg.value_coef,
            )?;
            self.core.apply_both(&policy_grad, &value_grad)?;
            Ok(UpdateDiagnostics {
                policy_loss,
                value_loss,
                entropy,
                ..UpdateDiagnostics::default()
            })
        })();
        if result.is_err() {
            // Leave the batch for the caller to inspect or abort.
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::HeadKind;
    use std::collections::BTreeMap;

    fn step(reward: f64, terminal: bool) -> StepRecord {
        StepRecord {
            obs: vec![0.0, 0.0],
            action: 0,
            reward,
            next_obs: vec![1.0, 0.0],
            terminal,
            annotations: BTreeMap::new(),
        }
    }

    /// Value net that outputs `w . obs` so per-state values can be pinned.
    fn linear_value(w: &[f32]) -> MlpModel {
        let mut m = MlpModel::zeros(&[w.len(), 1], HeadKind::LinearValue).unwrap();
        let mut params = w.to_vec();
        params.push(0.0);
        m.set_flat_params(&params).unwrap();
        m
    }

    #[test]
    fn hand_advantage_with_bootstrap() {
        // V(s_t) = 1.5 (obs [1.5, 0] with w = [1, 0]... use w = [1, 1]):
        // obs [1.5, 0] -> 1.5, next_obs [2, 0] -> 2.0.
        let value = linear_value(&[1.0, 1.0]);
        let mut s = step(1.0, false);
        s.obs = vec![1.5, 0.0];
        s.next_obs = vec![2.0, 0.0];
        let adv = one_step_advantages(&[s], &value, 0.99).unwrap();
        assert!((adv[0] - 1.48).abs() < 1e-12); // 1 + 0.99*2 - 1.5
    }

    #[test]
    fn terminal_advantage_drops_bootstrap() {
        let value = linear_value(&[1.0, 0.0]);
        let mut s = step(0.7, true);
        s.obs = vec![0.25, 0.0];
        s.next_obs = vec![9.0, 9.0]; // must be ignored
        let adv = one_step_advantages(&[s], &value, 0.99).unwrap();
        assert!((adv[0] - (0.7 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let mut rng = crate::rng::SplitMix64::new(4);
        let policy = MlpModel::initialized(&[2, 4, 3], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
        let obs = [0.4, -0.2];
        let views = [ObsAction { obs: &obs, action: 1 }];
        let (_, grad, _) = policy_loss_grad(&policy, &views, &[0.0], 0.0).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = crate::rng::SplitMix64::new(21);
        let policy = MlpModel::initialized(&[2, 4, 3], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
        let obs = [[0.3, -0.8], [1.0, 0.2], [-0.5, 0.6]];
        let views: Vec<ObsAction> = obs
            .iter()
            .enumerate()
            .map(|(i, o)| ObsAction {
                obs: o.as_slice(),
                action: i % 3,
            })
            .collect();
        let advantages = [0.7, -1.2, 0.3];
        let beta = 0.05;
        let (_, grad, _) = policy_loss_grad(&policy, &views, &advantages, beta).unwrap();
        let loss_of = |m: &MlpModel| {
            policy_loss_grad(m, &views, &advantages, beta).unwrap().0
        };
        let h = 1e-3;
        for i in 0..policy.param_count() {
            let orig = policy.param_at(i);
            let mut plus = policy.clone();
            plus.set_param_at(i, (orig as f64 + h) as f32);
            let mut minus = policy.clone();
            minus.set_param_at(i, (orig as f64 - h) as f32);
            let dh = plus.param_at(i) as f64 - minus.param_at(i) as f64;
            let fd = (loss_of(&plus) - loss_of(&minus)) / dh;
            let rel = (grad[i] - fd).abs() / (grad[i].abs() + fd.abs()).max(1e-6);
            assert!(rel < 1e-3, "param {i}: {} vs {}", grad[i], fd);
        }
    }

    #[test]
    fn update_consumes_the_batch() {
        let spec = crate::env::EnvSpec {
            observation_dim: 2,
            action_count: 2,
            max_episode_steps: 10,
            reward_range: (0.0, 1.0),
        };
        let cfg = LearnerConfig {
            batch_size: 3,
            ..LearnerConfig::defaults_for(Algorithm::A2c)
        };
        let mut l = A2cLearner::new(AgentId(0), cfg, &spec, 5).unwrap();
        for i in 0..3 {
            let mut rec = step(1.0, i == 2);
            rec.annotations.insert(
                AgentId(0),
                ModelOutputs {
                    probs: vec![0.5, 0.5],
                    value: Some(ValueEstimate::State(0.0)),
                },
            );
            l.record_step(rec);
        }
        assert!(l.ready_to_update());
        l.update(AgentId(0)).unwrap();
        assert_eq!(l.buffered_steps(), 0);
    }
}
