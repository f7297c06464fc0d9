//! Adaptive-moment (Adam) optimizer state for [`Mlp`] parameters.

use ndarray::{Array1, Array2};

use super::{Gradients, LayerGrad, Mlp};
use crate::error::{Error, Result};

/// First/second-moment accumulators for every parameter of one network, plus
/// the shared step counter and hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    /// First-moment (mean) estimates, mirroring the network's layer shapes.
    pub first_moment: Vec<LayerGrad>,
    /// Second-moment (uncentered variance) estimates.
    pub second_moment: Vec<LayerGrad>,
    /// Number of optimizer steps taken so far.
    pub step: u64,
    /// Base step size.
    pub learning_rate: f64,
    /// Exponential decay for the first moment.
    pub beta1: f64,
    /// Exponential decay for the second moment.
    pub beta2: f64,
    /// Denominator fuzz term.
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh zeroed state shaped for `net`, with the standard moment decays
    /// (0.9, 0.999) and fuzz 1e-8.
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let zeros = |net: &Mlp| -> Vec<LayerGrad> {
            net.layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect()
        };
        AdamState {
            first_moment: zeros(net),
            second_moment: zeros(net),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of `net` in place from `grads`, with bias-corrected
/// moment estimates.
pub fn adam_step(state: &mut AdamState, net: &mut Mlp, grads: &Gradients) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::dim(format!(
            "gradient has {} layers, network has {}",
            grads.layers.len(),
            net.layers.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.learning_rate, state.epsilon);

    for (idx, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[idx];
        if g.weight.dim() != layer.weight.dim() || g.bias.dim() != layer.bias.dim() {
            return Err(Error::dim(format!("gradient shape mismatch at layer {idx}")));
        }
        let m = &mut state.first_moment[idx];
        let v = &mut state.second_moment[idx];

        m.weight.zip_mut_with(&g.weight, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
        v.weight.zip_mut_with(&g.weight, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        ndarray::Zip::from(&mut layer.weight)
            .and(&m.weight)
            .and(&v.weight)
            .for_each(|p, &m, &v| *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));

        m.bias.zip_mut_with(&g.bias, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
        v.bias.zip_mut_with(&g.bias, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        ndarray::Zip::from(&mut layer.bias)
            .and(&m.bias)
            .and(&v.bias)
            .for_each(|p, &m, &v| *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
    }
    Ok(())
}
