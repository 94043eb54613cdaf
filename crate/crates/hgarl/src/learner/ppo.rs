//! Proximal policy optimization with the clipped surrogate.
//!
//! The surrogate per step is `min(r_t * A_t, clip(r_t, 1-eps, 1+eps) * A_t)`
//! with `r_t = pi(a_t|s_t) / pi_old(a_t|s_t)`, maximized over several
//! epochs of shuffled minibatches. `pi_old` is whatever annotation stream
//! the batch is trained from (the learner's own, or an adopted peer's).
//! Advantages are n-step bootstrap returns minus V(s_t), standardized per
//! batch when `ppo_adv_norm` is set.

use super::batch::StepRecord;
use super::{
    model_err, value_mse_loss_grad, ActStep, Core, ExportedModels, Learner, LearnerError,
    ModelOutputs, ObsAction, UpdateDiagnostics, ValueEstimate,
};
use crate::env::EnvSpec;
use crate::learner::config::{Algorithm, LearnerConfig};
use crate::nn::MlpModel;
use crate::AgentId;

/// Discounted rewards-to-go within the batch. Runs reset at terminal
/// seams; a batch that ends mid-episode bootstraps with V of the last
/// step's next observation.
pub fn n_step_returns(
    steps: &[StepRecord],
    value_net: &MlpModel,
    gamma: f64,
) -> Result<Vec<f64>, LearnerError> {
    let n = steps.len();
    let mut returns = vec![0.0; n];
    for t in (0..n).rev() {
        let tail = if steps[t].terminal {
            0.0
        } else if t + 1 == n {
            value_net.values(&steps[t].next_obs).map_err(model_err)?[0]
        } else {
            returns[t + 1]
        };
        returns[t] = steps[t].reward + gamma * tail;
    }
    Ok(returns)
}

/// Standardize to mean 0, std 1 (population std, floored at 1e-8).
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len() as f64;
    if n < 1.0 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Clipped-surrogate loss over the steps selected by `indices`:
/// `-mean(min(r*A, clip(r)*A) + entropy_coef * H)`. Old probabilities and
/// advantages are constants. Returns (loss, gradient, mean surrogate,
/// mean entropy).
pub fn clipped_loss_grad(
    policy: &MlpModel,
    steps: &[ObsAction],
    indices: &[usize],
    old_probs_taken: &[f64],
    advantages: &[f64],
    clip_epsilon: f64,
    entropy_coef: f64,
) -> Result<(f64, Vec<f64>, f64, f64), LearnerError> {
    let m = indices.len() as f64;
    let n_actions = policy.output_dim();
    let mut loss = 0.0;
    let mut surrogate_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut grad = vec![0.0; policy.param_count()];
    for &i in indices {
        let step = &steps[i];
        let old = old_probs_taken[i];
        if old <= 0.0 {
            return Err(LearnerError::DataIntegrity {
                context: format!("stored old probability {old} at step {i} is not positive"),
            });
        }
        let adv = advantages[i];
        let dist = policy.policy(step.obs).map_err(model_err)?;
        let ratio = dist.probs[step.action] / old;
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv;
        let surrogate = unclipped.min(clipped);
        surrogate_sum += surrogate;
        let h = dist.entropy();
        entropy_sum += h;
        loss -= (surrogate + entropy_coef * h) / m;
        let mut upstream = vec![0.0; n_actions];
        for (u, lp) in upstream.iter_mut().zip(&dist.log_probs) {
            *u = entropy_coef * (lp + 1.0) / m;
        }
        // The min picks the unclipped branch when it is no larger; only
        // then does the surrogate depend on theta.
        if unclipped <= clipped {
            upstream[step.action] -= adv / old / m;
        }
        let g = policy.backward(step.obs, &upstream).map_err(model_err)?;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((loss, grad, surrogate_sum / m, entropy_sum / m))
}

pub struct PpoLearner {
    core: Core,
}

impl PpoLearner {
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

impl Learner for PpoLearner {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Ppo
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

    fn update(&mut self, source: AgentId) -> Result<UpdateDiagnostics, LearnerError> {
        if self.core.batch.is_empty() {
            return Err(LearnerError::EmptyBatch);
        }
        let steps = std::mem::take(&mut self.core.batch.steps);
        let own = self.core.id;
        let result = (|| {
            let cfg = self.core.cfg.clone();
            let returns = n_step_returns(&steps, &self.core.value, cfg.gamma)?;
            let mut advantages = Vec::with_capacity(steps.len());
            for (s, ret) in steps.iter().zip(&returns) {
                let v = self.core.value.values(&s.obs).map_err(model_err)?[0];
                advantages.push(ret - v);
            }
            if cfg.ppo_adv_norm {
                normalize_advantages(&mut advantages);
            }
            let old_probs_taken: Vec<f64> = steps
                .iter()
                .map(|s| s.annotation_for(source, own).probs[s.action])
                .collect();
            let views = ObsAction::of(&steps);
            let observations: Vec<&[f64]> = steps.iter().map(|s| s.obs.as_slice()).collect();

            let mut order: Vec<usize> = (0..steps.len()).collect();
            let mut diag = UpdateDiagnostics::default();
            let mut first_minibatch = true;
            let mut batches = 0.0;
            for _ in 0..cfg.ppo_epochs {
                self.core.aux_rng.shuffle(&mut order);
                for chunk in order.chunks(cfg.ppo_minibatch) {
                    let (loss, grad, surrogate, entropy) = clipped_loss_grad(
                        &self.core.policy,
                        &views,
                        chunk,
                        &old_probs_taken,
                        &advantages,
                        cfg.clip_epsilon,
                        cfg.entropy_coef,
                    )?;
                    let target_chunk: Vec<f64> = chunk.iter().map(|&i| returns[i]).collect();
                    let obs_chunk: Vec<&[f64]> = chunk.iter().map(|&i| observations[i]).collect();
                    let (value_loss, value_grad) = value_mse_loss_grad(
                        &self.core.value,
                        &obs_chunk,
                        &target_chunk,
                        cfg.value_coef,
                    )?;
                    self.core.apply_both(&grad, &value_grad)?;
                    if first_minibatch {
                        diag.surrogate = Some(surrogate);
                        first_minibatch = false;
                    }
                    diag.policy_loss += loss;
                    diag.value_loss += value_loss;
                    diag.entropy += entropy;
                    batches += 1.0;
                }
            }
            diag.policy_loss /= batches;
            diag.value_loss /= batches;
            diag.entropy /= batches;
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
