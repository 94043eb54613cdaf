//! Minimal feed-forward networks with exact analytic gradients.
//!
//! A [`MlpModel`] is a stack of affine layers with rectifier activations
//! on the hidden layers and one of two heads on the output layer:
//!
//! * `SoftmaxPolicy`: the output is a probability vector over actions,
//!   returned as an [`ActionDistribution`];
//! * `LinearValue`: the output units are raw scalars, one per output
//!   dimension (a single state value, or one action value per action).
//!
//! Parameters are stored as `f32` (that is also the wire representation,
//! see [`snapshot`]); all arithmetic runs in `f64`. The flat parameter
//! order is fixed: layer 0 weights row-major (`w[out][in]`), layer 0
//! biases, layer 1 weights, and so on. Gradients returned by
//! [`MlpModel::backward`] use the same order, so an optimizer step is a
//! single fused walk over both vectors.
//!
//! There is no autodiff graph here: [`MlpModel::backward`] computes the
//! gradient of `<head output, upstream>` with respect to every parameter
//! by hand-rolled backpropagation, including the softmax Jacobian when
//! the head is a policy. Callers express whatever objective they need by
//! choosing the upstream vector.

pub mod snapshot;

use crate::rng::SplitMix64;
use thiserror::Error;

/// Output head of a network. The numeric tags (0, 1) are the wire codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    SoftmaxPolicy,
    LinearValue,
}

impl HeadKind {
    pub fn code(self) -> u8 {
        match self {
            HeadKind::SoftmaxPolicy => 0,
            HeadKind::LinearValue => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadKind::SoftmaxPolicy),
            1 => Some(HeadKind::LinearValue),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("model needs at least an input and an output dimension")]
    TooFewLayers,
    #[error("layer dimensions must be positive")]
    ZeroDimension,
    #[error("operation requires a {required:?} head, model has {actual:?}")]
    WrongHead {
        required: HeadKind,
        actual: HeadKind,
    },
}

/// A probability vector over the discrete action set together with its
/// logarithms. Produced by softmax-head forward passes and by the policy
/// combination rules.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    /// Numerically stable softmax of raw scores.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let log_sum = sum.ln();
        let probs: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        let log_probs: Vec<f64> = logits.iter().map(|z| z - max - log_sum).collect();
        Self { probs, log_probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Sample an action by inverse CDF walk over `probs`.
    pub fn sample(&self, rng: &mut SplitMix64) -> usize {
        let u = rng.next_f64();
        let mut cum = 0.0;
        for (i, p) in self.probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return i;
            }
        }
        self.probs.len() - 1
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .zip(&self.log_probs)
            .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
            .sum::<f64>()
    }
}

/// Lowest-index argmax over a score slice.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// Row-major `[out][in]`.
    weights: Vec<f32>,
    biases: Vec<f32>,
}

/// A multilayer perceptron: the unit of knowledge exchange between
/// agents. Owned and mutated by exactly one learner; any copy that
/// crosses an agent boundary travels as serialized bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_dims: Vec<usize>,
    head: HeadKind,
    layers: Vec<Layer>,
}

impl MlpModel {
    /// All-zero parameters. `layer_dims` runs input, hidden..., output.
    pub fn zeros(layer_dims: &[usize], head: HeadKind) -> Result<Self, NnError> {
        if layer_dims.len() < 2 {
            return Err(NnError::TooFewLayers);
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(NnError::ZeroDimension);
        }
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                weights: vec![0.0; w[0] * w[1]],
                biases: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            head,
            layers,
        })
    }

    /// Parameters drawn uniformly from `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`.
    pub fn initialized(
        layer_dims: &[usize],
        head: HeadKind,
        rng: &mut SplitMix64,
    ) -> Result<Self, NnError> {
        let mut model = Self::zeros(layer_dims, head)?;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            let bound = 1.0 / (layer_dims[l] as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = rng.next_range(-bound, bound) as f32;
            }
            for b in layer.biases.iter_mut() {
                *b = rng.next_range(-bound, bound) as f32;
            }
        }
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Parameters in the fixed flat order.
    pub fn flat_params(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Replace all parameters from a flat vector in the fixed order.
    pub fn set_flat_params(&mut self, params: &[f32]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::DimensionMismatch {
                what: "flat parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut idx = 0;
        for layer in self.layers.iter_mut() {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[idx..idx + nw]);
            idx += nw;
            let nb = layer.biases.len();
            layer.biases.copy_from_slice(&params[idx..idx + nb]);
            idx += nb;
        }
        Ok(())
    }

    pub fn param_at(&self, idx: usize) -> f32 {
        let mut i = idx;
        for layer in &self.layers {
            if i < layer.weights.len() {
                return layer.weights[i];
            }
            i -= layer.weights.len();
            if i < layer.biases.len() {
                return layer.biases[i];
            }
            i -= layer.biases.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn set_param_at(&mut self, idx: usize, value: f32) {
        let mut i = idx;
        for layer in self.layers.iter_mut() {
            if i < layer.weights.len() {
                layer.weights[i] = value;
                return;
            }
            i -= layer.weights.len();
            if i < layer.biases.len() {
                layer.biases[i] = value;
                return;
            }
            i -= layer.biases.len();
        }
        panic!("parameter index {idx} out of range");
    }

    /// `params[i] += scale * delta[i]`, rounding back to f32 storage.
    pub fn apply_flat_delta(&mut self, delta: &[f64], scale: f64) -> Result<(), NnError> {
        if delta.len() != self.param_count() {
            return Err(NnError::DimensionMismatch {
                what: "flat delta vector",
                expected: self.param_count(),
                got: delta.len(),
            });
        }
        let mut idx = 0;
        for layer in self.layers.iter_mut() {
            for w in layer.weights.iter_mut() {
                *w = (*w as f64 + scale * delta[idx]) as f32;
                idx += 1;
            }
            for b in layer.biases.iter_mut() {
                *b = (*b as f64 + scale * delta[idx]) as f32;
                idx += 1;
            }
        }
        Ok(())
    }

    fn check_obs(&self, observation: &[f64]) -> Result<(), NnError> {
        if observation.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                what: "observation",
                expected: self.input_dim(),
                got: observation.len(),
            });
        }
        Ok(())
    }

    /// Inputs to every layer (`acts[0]` is the observation, `acts[l]` the
    /// rectified output of layer `l-1`) plus the raw output-layer scores.
    fn forward_trace(&self, observation: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n_layers = self.layers.len();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
        acts.push(observation.to_vec());
        let mut pre = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &acts[l];
            let out_dim = self.layer_dims[l + 1];
            let in_dim = self.layer_dims[l];
            pre = vec![0.0f64; out_dim];
            for o in 0..out_dim {
                let mut z = layer.biases[o] as f64;
                let row = &layer.weights[o * in_dim..(o + 1) * in_dim];
                for (w, x) in row.iter().zip(input.iter()) {
                    z += *w as f64 * x;
                }
                pre[o] = z;
            }
            if l + 1 < n_layers {
                acts.push(pre.iter().map(|z| z.max(0.0)).collect());
            }
        }
        (acts, pre)
    }

    /// Head output for one observation: softmax probabilities for a
    /// policy head, raw scores for a value head. Pure: identical inputs
    /// give identical outputs.
    pub fn forward(&self, observation: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_obs(observation)?;
        let (_, logits) = self.forward_trace(observation);
        Ok(match self.head {
            HeadKind::SoftmaxPolicy => ActionDistribution::from_logits(&logits).probs,
            HeadKind::LinearValue => logits,
        })
    }

    /// Forward pass through a softmax head.
    pub fn policy(&self, observation: &[f64]) -> Result<ActionDistribution, NnError> {
        if self.head != HeadKind::SoftmaxPolicy {
            return Err(NnError::WrongHead {
                required: HeadKind::SoftmaxPolicy,
                actual: self.head,
            });
        }
        self.check_obs(observation)?;
        let (_, logits) = self.forward_trace(observation);
        Ok(ActionDistribution::from_logits(&logits))
    }

    /// Forward pass through a linear-value head: one scalar per output
    /// unit (a single V, or one Q per action).
    pub fn values(&self, observation: &[f64]) -> Result<Vec<f64>, NnError> {
        if self.head != HeadKind::LinearValue {
            return Err(NnError::WrongHead {
                required: HeadKind::LinearValue,
                actual: self.head,
            });
        }
        self.check_obs(observation)?;
        let (_, out) = self.forward_trace(observation);
        Ok(out)
    }

    /// Gradient of `<head_output(observation), upstream>` with respect to
    /// every parameter, in the fixed flat order. `upstream` is treated as
    /// a constant; for a softmax head the softmax Jacobian is applied.
    pub fn backward(&self, observation: &[f64], upstream: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_obs(observation)?;
        if upstream.len() != self.output_dim() {
            return Err(NnError::DimensionMismatch {
                what: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        let (acts, logits) = self.forward_trace(observation);

        // Delta at the output pre-activations.
        let mut delta: Vec<f64> = match self.head {
            HeadKind::LinearValue => upstream.to_vec(),
            HeadKind::SoftmaxPolicy => {
                let probs = ActionDistribution::from_logits(&logits).probs;
                let dot: f64 = upstream.iter().zip(&probs).map(|(u, p)| u * p).sum();
                probs
                    .iter()
                    .zip(upstream)
                    .map(|(p, u)| p * (u - dot))
                    .collect()
            }
        };

        let mut grad = vec![0.0f64; self.param_count()];
        // Flat offsets of each layer's parameter block.
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.weights.len() + layer.biases.len();
        }

        for l in (0..self.layers.len()).rev() {
            let in_dim = self.layer_dims[l];
            let out_dim = self.layer_dims[l + 1];
            let input = &acts[l];
            let base = offsets[l];
            for o in 0..out_dim {
                let d = delta[o];
                let row = base + o * in_dim;
                for i in 0..in_dim {
                    grad[row + i] = d * input[i];
                }
                grad[base + out_dim * in_dim + o] = d;
            }
            if l > 0 {
                // Backprop through this layer's weights, then the
                // rectifier that produced our input.
                let weights = &self.layers[l].weights;
                let mut prev = vec![0.0f64; in_dim];
                for (o, d) in delta.iter().enumerate() {
                    let row = &weights[o * in_dim..(o + 1) * in_dim];
                    for (p, w) in prev.iter_mut().zip(row.iter()) {
                        *p += *w as f64 * d;
                    }
                }
                for (p, x) in prev.iter_mut().zip(acts[l].iter()) {
                    if *x <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_model(head: HeadKind) -> MlpModel {
        // One hidden layer, all constants exact in f32.
        let mut m = MlpModel::zeros(&[2, 2, 2], head).unwrap();
        m.set_flat_params(&[
            0.5, -0.25, 0.75, 1.0, // W0 rows (out x in)
            0.125, -0.1875, // b0
            1.0, -1.0, 0.5, 0.5, // W1
            0.0, 0.25, // b1
        ])
        .unwrap();
        m
    }

    #[test]
    fn zero_model_softmax_is_uniform() {
        let m = MlpModel::zeros(&[3, 4], HeadKind::SoftmaxPolicy).unwrap();
        let p = m.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn zero_model_value_is_zero() {
        let m = MlpModel::zeros(&[3, 5, 1], HeadKind::LinearValue).unwrap();
        assert_eq!(m.values(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn hand_computed_forward_softmax() {
        // x=[1,-0.5]; z0=[0.75,0.0625] (both positive, relu inactive);
        // logits=[0.6875,0.65625]; softmax worked out offline.
        let m = hand_model(HeadKind::SoftmaxPolicy);
        let d = m.policy(&[1.0, -0.5]).unwrap();
        assert!((d.probs[0] - 0.5078118642792044).abs() < 1e-12);
        assert!((d.probs[1] - 0.49218813572079556).abs() < 1e-12);
        assert!((d.log_probs[0] - (-0.6776442459057149)).abs() < 1e-12);
        assert!((d.log_probs[1] - (-0.7088942459057149)).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_forward_values() {
        let m = hand_model(HeadKind::LinearValue);
        let v = m.values(&[1.0, -0.5]).unwrap();
        assert!((v[0] - 0.6875).abs() < 1e-12);
        assert!((v[1] - 0.65625).abs() < 1e-12);
    }

    #[test]
    fn forward_is_pure() {
        let mut rng = SplitMix64::new(11);
        let m = MlpModel::initialized(&[4, 8, 3], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
        let obs = [0.1, -0.7, 2.0, 0.0];
        let a = m.forward(&obs).unwrap();
        let b = m.forward(&obs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn softmax_normalizes() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..50 {
            let m = MlpModel::initialized(&[3, 6, 5], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
            let obs: Vec<f64> = (0..3).map(|_| rng.next_range(-2.0, 2.0)).collect();
            let d = m.policy(&obs).unwrap();
            let sum: f64 = d.probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for (p, lp) in d.probs.iter().zip(&d.log_probs) {
                assert!(*p > 0.0 && *p < 1.0);
                assert!((lp - p.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = MlpModel::zeros(&[3, 2], HeadKind::SoftmaxPolicy).unwrap();
        assert!(matches!(
            m.forward(&[1.0, 2.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            m.backward(&[1.0, 2.0, 3.0], &[1.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = SplitMix64::new(9);
        let m = MlpModel::initialized(&[4, 6, 3], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
        let g = m.backward(&[0.5, -0.5, 1.0, 2.0], &[0.0, 0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
    }

    /// Central finite differences of `<head_output, upstream>`.
    fn fd_gradient(model: &MlpModel, obs: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
        let n = model.param_count();
        let mut grad = vec![0.0; n];
        let eval = |m: &MlpModel| -> f64 {
            m.forward(obs)
                .unwrap()
                .iter()
                .zip(upstream)
                .map(|(y, u)| y * u)
                .sum()
        };
        for i in 0..n {
            let orig = model.param_at(i);
            let mut plus = model.clone();
            plus.set_param_at(i, (orig as f64 + h) as f32);
            let mut minus = model.clone();
            minus.set_param_at(i, (orig as f64 - h) as f32);
            // Use the realized perturbation, which survives f32 rounding.
            let dh = plus.param_at(i) as f64 - minus.param_at(i) as f64;
            grad[i] = (eval(&plus) - eval(&minus)) / dh;
        }
        grad
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    /// Hidden-layer pre-activations; used to reject samples sitting on a
    /// rectifier kink, where a two-sided difference is not a derivative.
    fn hidden_pres(m: &MlpModel, obs: &[f64]) -> Vec<f64> {
        let mut input: Vec<f64> = obs.to_vec();
        let mut pres = Vec::new();
        for (l, layer) in m.layers.iter().take(m.layers.len() - 1).enumerate() {
            let in_dim = m.layer_dims[l];
            let out_dim = m.layer_dims[l + 1];
            let mut next = Vec::with_capacity(out_dim);
            for o in 0..out_dim {
                let mut z = layer.biases[o] as f64;
                for i in 0..in_dim {
                    z += layer.weights[o * in_dim + i] as f64 * input[i];
                }
                pres.push(z);
                next.push(z.max(0.0));
            }
            input = next;
        }
        pres
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // 100 random (model, input, upstream) triples across both heads,
        // resampled away from rectifier kinks.
        let mut rng = SplitMix64::new(20240604);
        let mut done = 0;
        while done < 100 {
            let head = if done % 2 == 0 {
                HeadKind::SoftmaxPolicy
            } else {
                HeadKind::LinearValue
            };
            let m = MlpModel::initialized(&[3, 5, 3], head, &mut rng).unwrap();
            let obs: Vec<f64> = (0..3).map(|_| rng.next_range(-1.0, 1.0)).collect();
            if hidden_pres(&m, &obs).iter().any(|z| z.abs() < 0.02) {
                continue;
            }
            let upstream: Vec<f64> = (0..3).map(|_| rng.next_range(-1.0, 1.0)).collect();
            let analytic = m.backward(&obs, &upstream).unwrap();
            let numeric = fd_gradient(&m, &obs, &upstream, 1e-3);
            for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
                assert!(
                    rel_err(*a, *n) < 1e-3,
                    "trial {done} param {i}: analytic {a} vs numeric {n}"
                );
            }
            done += 1;
        }
    }

    #[test]
    fn softmax_component_gradient_matches_fd() {
        // Upstream selecting one component: gradient of probs[a] itself.
        let mut rng = SplitMix64::new(77);
        let m = MlpModel::initialized(&[2, 4, 3], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
        let obs = [0.3, -0.9];
        let mut upstream = vec![0.0; 3];
        upstream[1] = 1.0;
        let analytic = m.backward(&obs, &upstream).unwrap();
        let numeric = fd_gradient(&m, &obs, &upstream, 1e-3);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!(rel_err(*a, *n) < 1e-3);
        }
    }

    #[test]
    fn sampling_near_one_hot() {
        let d = ActionDistribution {
            probs: vec![1.0 - 1e-6, 1e-6],
            log_probs: vec![(1.0f64 - 1e-6).ln(), (1e-6f64).ln()],
        };
        let mut rng = SplitMix64::new(1);
        for _ in 0..1000 {
            assert_eq!(d.sample(&mut rng), 0);
        }
    }

    #[test]
    fn sampling_uniform_frequency() {
        let d = ActionDistribution {
            probs: vec![0.5, 0.5],
            log_probs: vec![0.5f64.ln(), 0.5f64.ln()],
        };
        let mut rng = SplitMix64::new(2);
        let n = 10_000;
        let zeros = (0..n).filter(|_| d.sample(&mut rng) == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((0.48..=0.52).contains(&freq), "freq {freq}");
    }

    #[test]
    fn sampling_is_deterministic_per_rng_state() {
        let d = ActionDistribution::from_logits(&[0.3, -0.1, 0.7]);
        let a = d.sample(&mut SplitMix64::new(99));
        let b = d.sample(&mut SplitMix64::new(99));
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }
}
