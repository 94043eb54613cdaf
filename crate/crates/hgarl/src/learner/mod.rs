//! The three actor-critic learners behind one trait.
//!
//! A2C, PPO and ACER differ in how they turn a trajectory batch into
//! gradients, but they are interchangeable behind [`Learner`]: act,
//! record a step, update when the batch fills, export/import models.
//! That shared surface is what lets a heterogeneous group exchange whole
//! models and still train each member with its own algorithm.
//!
//! All loss functions are exposed as free functions returning
//! `(loss, flat gradient)` pairs so their analytic gradients can be
//! checked against finite differences of the same loss value.

pub mod a2c;
pub mod acer;
pub mod batch;
pub mod config;
pub mod optim;
pub mod ppo;
pub mod replay;

pub use batch::{ModelOutputs, StepRecord, TrajectoryBatch, ValueEstimate};
pub use config::{Algorithm, LearnerConfig, LearnerConfigError, OptimizerKind};

use crate::env::EnvSpec;
use crate::nn::{ActionDistribution, HeadKind, MlpModel};
use crate::rng::SplitMix64;
use crate::AgentId;
use optim::Optimizer;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("numerical failure: {context}")]
    NumericalFailure { context: String },
    #[error("data integrity: {context}")]
    DataIntegrity { context: String },
    #[error("update called with an empty batch")]
    EmptyBatch,
    #[error("model error: {0}")]
    Model(String),
    #[error("incompatible model: {context}")]
    IncompatibleModel { context: String },
}

/// Result of one action selection by a learner's own policy.
#[derive(Debug, Clone)]
pub struct ActStep {
    pub action: usize,
    pub outputs: ModelOutputs,
}

/// Owned copies of a learner's current models.
#[derive(Debug, Clone)]
pub struct ExportedModels {
    pub policy: MlpModel,
    pub value: MlpModel,
}

#[derive(Debug, Clone, Default)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Clipped-surrogate value of the first PPO minibatch (where the
    /// current policy still equals the collection policy).
    pub surrogate: Option<f64>,
    pub replay_updates: u32,
    pub replay_skipped: u32,
}

/// Common interface of all three learners.
pub trait Learner: Send {
    fn algorithm(&self) -> Algorithm;
    fn id(&self) -> AgentId;

    /// Sample an action from the learner's own policy with its own RNG,
    /// returning the full distribution and value prediction for
    /// trajectory annotation and for serving as a peer policy.
    fn act(&mut self, obs: &[f64]) -> ActStep;

    fn record_step(&mut self, rec: StepRecord);
    fn buffered_steps(&self) -> usize;
    fn batch_size(&self) -> usize;

    /// True exactly when a full batch is buffered.
    fn ready_to_update(&self) -> bool {
        self.buffered_steps() >= self.batch_size()
    }

    /// Train on the buffered batch, reading the annotation stream of
    /// `source` (the learner itself, or the member whose models were just
    /// adopted). Consumes the batch on success; on a numerical failure
    /// the batch is left for the caller to abort.
    fn update(&mut self, source: AgentId) -> Result<UpdateDiagnostics, LearnerError>;

    /// Drop the buffered batch without training (episode aborted).
    fn abort_batch(&mut self);

    fn export_models(&self) -> ExportedModels;

    /// Replace the policy (and, when given, the value model) with peer
    /// copies. Dimensions must match exactly; optimizer state resets.
    fn import_models(
        &mut self,
        policy: &MlpModel,
        value: Option<&MlpModel>,
    ) -> Result<(), LearnerError>;
}

/// Minimal (observation, action) view consumed by the loss functions.
#[derive(Debug, Clone, Copy)]
pub struct ObsAction<'a> {
    pub obs: &'a [f64],
    pub action: usize,
}

impl<'a> ObsAction<'a> {
    pub fn of(steps: &'a [StepRecord]) -> Vec<ObsAction<'a>> {
        steps
            .iter()
            .map(|s| ObsAction {
                obs: &s.obs,
                action: s.action,
            })
            .collect()
    }
}

fn model_err(e: crate::nn::NnError) -> LearnerError {
    LearnerError::Model(e.to_string())
}

/// Mean squared error of a single-output value net against fixed
/// targets, scaled by `coef`. Returns `(loss, flat gradient)`.
pub fn value_mse_loss_grad(
    value_net: &MlpModel,
    observations: &[&[f64]],
    targets: &[f64],
    coef: f64,
) -> Result<(f64, Vec<f64>), LearnerError> {
    assert_eq!(observations.len(), targets.len());
    let n = observations.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; value_net.param_count()];
    for (obs, target) in observations.iter().zip(targets) {
        let v = value_net.values(obs).map_err(model_err)?[0];
        let err = v - target;
        loss += coef * err * err / n;
        let upstream = [coef * 2.0 * err / n];
        let g = value_net.backward(obs, &upstream).map_err(model_err)?;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            *acc += gi;
        }
    }
    Ok((loss, grad))
}

fn ensure_finite(grad: &[f64], context: &str) -> Result<(), LearnerError> {
    if grad.iter().any(|g| !g.is_finite()) {
        Err(LearnerError::NumericalFailure {
            context: context.to_string(),
        })
    } else {
        Ok(())
    }
}

/// Shared learner internals: both networks, their optimizers, the batch
/// buffer, and the seeded RNG streams.
pub(crate) struct Core {
    pub id: AgentId,
    pub cfg: LearnerConfig,
    pub policy: MlpModel,
    pub value: MlpModel,
    pub policy_opt: Optimizer,
    pub value_opt: Optimizer,
    pub act_rng: SplitMix64,
    pub aux_rng: SplitMix64,
    pub batch: TrajectoryBatch,
}

impl Core {
    fn new(
        id: AgentId,
        cfg: LearnerConfig,
        spec: &EnvSpec,
        value_out: usize,
        seed: u64,
    ) -> Result<Self, LearnerError> {
        cfg.validate()
            .map_err(|e| LearnerError::Model(e.to_string()))?;
        let mut seeder = SplitMix64::new(seed);
        let mut init_rng = SplitMix64::new(seeder.next_u64());
        let act_rng = SplitMix64::new(seeder.next_u64());
        let aux_rng = SplitMix64::new(seeder.next_u64());

        let mut policy_dims = vec![spec.observation_dim];
        policy_dims.extend_from_slice(&cfg.hidden_dims);
        policy_dims.push(spec.action_count);
        let mut value_dims = vec![spec.observation_dim];
        value_dims.extend_from_slice(&cfg.hidden_dims);
        value_dims.push(value_out);

        let policy = MlpModel::initialized(&policy_dims, HeadKind::SoftmaxPolicy, &mut init_rng)
            .map_err(model_err)?;
        let value = MlpModel::initialized(&value_dims, HeadKind::LinearValue, &mut init_rng)
            .map_err(model_err)?;
        let policy_opt = Optimizer::new(cfg.optimizer, policy.param_count());
        let value_opt = Optimizer::new(cfg.optimizer, value.param_count());
        Ok(Self {
            id,
            cfg,
            policy,
            value,
            policy_opt,
            value_opt,
            act_rng,
            aux_rng,
            batch: TrajectoryBatch::default(),
        })
    }

    fn dist(&self, obs: &[f64]) -> ActionDistribution {
        self.policy.policy(obs).expect("dimensions fixed at build")
    }

    fn export(&self) -> ExportedModels {
        ExportedModels {
            policy: self.policy.clone(),
            value: self.value.clone(),
        }
    }

    fn import(&mut self, policy: &MlpModel, value: Option<&MlpModel>) -> Result<(), LearnerError> {
        if policy.layer_dims() != self.policy.layer_dims() || policy.head() != self.policy.head() {
            return Err(LearnerError::IncompatibleModel {
                context: format!(
                    "policy dims {:?} do not match {:?}",
                    policy.layer_dims(),
                    self.policy.layer_dims()
                ),
            });
        }
        if let Some(v) = value {
            if v.layer_dims() != self.value.layer_dims() || v.head() != self.value.head() {
                return Err(LearnerError::IncompatibleModel {
                    context: format!(
                        "value dims {:?} do not match {:?}",
                        v.layer_dims(),
                        self.value.layer_dims()
                    ),
                });
            }
        }
        self.policy = policy.clone();
        self.policy_opt.reset();
        if let Some(v) = value {
            self.value = v.clone();
            self.value_opt.reset();
        }
        Ok(())
    }

    /// Step both nets after checking every gradient is finite, so a
    /// failed update leaves the learner exactly as it was.
    fn apply_both(
        &mut self,
        policy_grad: &[f64],
        value_grad: &[f64],
    ) -> Result<(), LearnerError> {
        ensure_finite(policy_grad, "policy gradient")?;
        ensure_finite(value_grad, "value gradient")?;
        self.policy_opt.step(
            &mut self.policy,
            policy_grad,
            self.cfg.learning_rate,
            self.cfg.grad_clip,
        )?;
        self.value_opt.step(
            &mut self.value,
            value_grad,
            self.cfg.learning_rate,
            self.cfg.grad_clip,
        )?;
        Ok(())
    }
}

/// Construct a learner of the requested algorithm.
pub fn build_learner(
    id: AgentId,
    algorithm: Algorithm,
    cfg: &LearnerConfig,
    spec: &EnvSpec,
    seed: u64,
) -> Result<Box<dyn Learner>, LearnerError> {
    Ok(match algorithm {
        Algorithm::A2c => Box::new(a2c::A2cLearner::new(id, cfg.clone(), spec, seed)?),
        Algorithm::Ppo => Box::new(ppo::PpoLearner::new(id, cfg.clone(), spec, seed)?),
        Algorithm::Acer => Box::new(acer::AcerLearner::new(id, cfg.clone(), spec, seed)?),
    })
}
