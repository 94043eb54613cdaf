//! Deterministic first-order optimizers over flat gradients.

use super::config::OptimizerKind;
use super::LearnerError;
use crate::nn::MlpModel;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-model optimizer state. Plain SGD keeps none; Adam keeps first and
/// second moment vectors. Both are deterministic given the gradient
/// stream.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, param_count: usize) -> Self {
        let len = if kind == OptimizerKind::Adam { param_count } else { 0 };
        Self {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Drop accumulated moments (after a model adoption the old moments
    /// describe parameters that no longer exist).
    pub fn reset(&mut self) {
        self.m.iter_mut().for_each(|x| *x = 0.0);
        self.v.iter_mut().for_each(|x| *x = 0.0);
        self.t = 0;
    }

    /// Validate, clip, and apply one descent step along `grad`. Returns
    /// the pre-clip gradient norm. A non-finite gradient leaves the model
    /// untouched.
    pub fn step(
        &mut self,
        model: &mut MlpModel,
        grad: &[f64],
        lr: f64,
        grad_clip: f64,
    ) -> Result<f64, LearnerError> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(LearnerError::NumericalFailure {
                context: "non-finite gradient".to_string(),
            });
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let scale = if grad_clip > 0.0 && norm > grad_clip {
            grad_clip / norm
        } else {
            1.0
        };
        match self.kind {
            OptimizerKind::Sgd => {
                model
                    .apply_flat_delta(grad, -lr * scale)
                    .map_err(|e| LearnerError::Model(e.to_string()))?;
            }
            OptimizerKind::Adam => {
                if self.m.len() != grad.len() {
                    return Err(LearnerError::Model(format!(
                        "optimizer sized for {} params, gradient has {}",
                        self.m.len(),
                        grad.len()
                    )));
                }
                self.t += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                let mut delta = vec![0.0; grad.len()];
                for (i, g) in grad.iter().enumerate() {
                    let g = g * scale;
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    delta[i] = -(lr * m_hat) / (v_hat.sqrt() + ADAM_EPS);
                }
                model
                    .apply_flat_delta(&delta, 1.0)
                    .map_err(|e| LearnerError::Model(e.to_string()))?;
            }
        }
        Ok(norm)
    }
}
