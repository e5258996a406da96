//! Conditioning input layout shared by the DDPM and flow-matching models.
//!
//! The denoiser sees one flat vector: the current state, the masked source
//! image in model space, the mask, a one-hot class label, and four smooth
//! time features. Layout is fixed per config and never reordered.

use crate::tensor::Tensor;
use crate::toyworld::{masked_view, to_model_space, InpaintTask};

/// Flat conditioning length for a given image size and class count:
/// `[x_t | masked_image | mask | one_hot(label) | time features]`.
pub fn cond_input_dim(width: usize, height: usize, k: usize) -> usize {
    3 * width * height + 3 * width * height + width * height + k + 4
}

/// Time features: `(t, sin(2*pi*t), cos(2*pi*t), sin(4*pi*t))` for a time
/// fraction `t` in [0,1].
pub fn time_features(t_frac: f64) -> [f64; 4] {
    let tau = std::f64::consts::TAU;
    [
        t_frac,
        (tau * t_frac).sin(),
        (tau * t_frac).cos(),
        (2.0 * tau * t_frac).sin(),
    ]
}

/// Precomputed per-task conditioning (everything except the state and time).
#[derive(Debug, Clone)]
pub struct TaskCond {
    pub masked_model: Vec<f64>,
    pub mask: Vec<f64>,
    pub one_hot: Vec<f64>,
}

impl TaskCond {
    pub fn new(task: &InpaintTask, k: usize) -> Self {
        let masked_model = to_model_space(&masked_view(task)).data;
        let mut one_hot = vec![0.0; k];
        one_hot[task.label] = 1.0;
        TaskCond {
            masked_model,
            mask: task.mask.values.clone(),
            one_hot,
        }
    }

    /// Assemble the full network input for state `x_t` at time fraction `t_frac`.
    pub fn build(&self, x_t: &[f64], t_frac: f64) -> Tensor {
        let mut data = Vec::with_capacity(
            x_t.len() + self.masked_model.len() + self.mask.len() + self.one_hot.len() + 4,
        );
        data.extend_from_slice(x_t);
        data.extend_from_slice(&self.masked_model);
        data.extend_from_slice(&self.mask);
        data.extend_from_slice(&self.one_hot);
        data.extend_from_slice(&time_features(t_frac));
        Tensor::vector(data)
    }
}
