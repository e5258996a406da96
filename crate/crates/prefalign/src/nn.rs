//! Dense feed-forward network with manual backpropagation and Adam.
//!
//! Hidden layers apply `tanh`; the output layer is linear. Tanh is C1
//! everywhere, so analytic gradients can be validated against central finite
//! differences without kink artifacts. Weights are row-major `(out, in)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

/// Activation tag. Only tanh is supported; the tag exists so checkpoints
/// record what they were trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major (out_dim, in_dim).
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

/// Gradients with the same layout as [`MlpParams::layers`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpParams {
    /// Glorot-uniform init: per layer, weights uniform in
    /// `±sqrt(6/(fan_in+fan_out))`, biases zero. Deterministic in `seed`.
    pub fn init(input_dim: usize, hidden_dims: &[usize], output_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(output_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Layer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights,
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        MlpParams {
            input_dim,
            hidden_dims: hidden_dims.to_vec(),
            output_dim,
            activation: Activation::Tanh,
            layers,
        }
    }

    /// All-zero parameters with the given architecture.
    pub fn zeros(input_dim: usize, hidden_dims: &[usize], output_dim: usize) -> Self {
        let mut p = Self::init(input_dim, hidden_dims, output_dim, 0);
        for layer in &mut p.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
            layer.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        p
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                context: "mlp input",
                expected: format!("{}", self.input_dim),
                got: format!("{}", input.len()),
            });
        }
        Ok(())
    }
}

impl MlpGrads {
    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|g| *g *= factor);
            b.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(g, o)| *g += o);
            b.iter_mut().zip(ob).for_each(|(g, o)| *g += o);
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, factor: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(g, o)| *g += o * factor);
            b.iter_mut().zip(ob).for_each(|(g, o)| *g += o * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b).all(|g| g.is_finite()))
    }
}

fn affine(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for o in 0..layer.out_dim {
        let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
        let mut acc = layer.biases[o];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        out[o] = acc;
    }
}

/// Forward pass. Tanh on every layer except the last, which stays linear.
pub fn mlp_forward(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    params.check_input(input)?;
    let mut cur = input.data.clone();
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut next = vec![0.0; layer.out_dim];
        affine(layer, &cur, &mut next);
        if i != last {
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        cur = next;
    }
    let out = Tensor::vector(cur);
    out.check_finite("mlp_forward output")?;
    Ok(out)
}

/// Forward pass that keeps per-layer activations for backprop.
/// `activations[0]` is the input; `activations[i+1]` is layer `i`'s output.
fn forward_trace(params: &MlpParams, input: &[f64]) -> Vec<Vec<f64>> {
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(input.to_vec());
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        let mut next = vec![0.0; layer.out_dim];
        affine(layer, activations.last().unwrap(), &mut next);
        if i != last {
            next.iter_mut().for_each(|v| *v = v.tanh());
        }
        activations.push(next);
    }
    activations
}

/// Backpropagation of `upstream_grad` (dLoss/dOutput) through the network.
/// Returns parameter gradients and the gradient w.r.t. the input.
pub fn mlp_backward(
    params: &MlpParams,
    input: &Tensor,
    upstream_grad: &Tensor,
) -> Result<(MlpGrads, Tensor)> {
    params.check_input(input)?;
    if upstream_grad.len() != params.output_dim {
        return Err(Error::ShapeMismatch {
            context: "mlp upstream grad",
            expected: format!("{}", params.output_dim),
            got: format!("{}", upstream_grad.len()),
        });
    }
    let activations = forward_trace(params, &input.data);
    let mut grads = params.zero_grads();
    let mut delta = upstream_grad.data.clone();
    let last = params.layers.len() - 1;

    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        // tanh' in terms of the stored activation: 1 - a^2.
        if i != last {
            for (d, a) in delta.iter_mut().zip(&activations[i + 1]) {
                *d *= 1.0 - a * a;
            }
        }
        let below = &activations[i];
        let (gw, gb) = &mut grads.layers[i];
        for o in 0..layer.out_dim {
            let d = delta[o];
            gb[o] = d;
            let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (g, x) in row.iter_mut().zip(below) {
                *g = d * x;
            }
        }
        let mut next_delta = vec![0.0; layer.in_dim];
        for o in 0..layer.out_dim {
            let d = delta[o];
            let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
            for (nd, w) in next_delta.iter_mut().zip(row) {
                *nd += d * w;
            }
        }
        delta = next_delta;
    }
    Ok((grads, Tensor::vector(delta)))
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<(Vec<f64>, Vec<f64>)>,
    pub v: Vec<(Vec<f64>, Vec<f64>)>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_stab: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64) -> Self {
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect::<Vec<_>>()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps_stab: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(state: &mut AdamState, params: &mut MlpParams, grads: &MlpGrads) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            context: "adam_step gradients",
            step: Some(state.step as usize),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[i];
        let (mw, mb) = &mut state.m[i];
        let (vw, vb) = &mut state.v[i];
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for j in 0..p.len() {
                m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
                v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= state.lr * m_hat / (v_hat.sqrt() + state.eps_stab);
            }
        };
        update(&mut layer.weights, gw, mw, vw);
        update(&mut layer.biases, gb, mb, vb);
    }
    Ok(())
}
