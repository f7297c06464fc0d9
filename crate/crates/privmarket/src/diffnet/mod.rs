//! Minimal differentiable feed-forward network engine.
//!
//! A deliberately small, fully hand-rolled MLP stack: batched forward
//! evaluation with a cached tape, exact reverse-mode gradients with respect to
//! **both** parameters (for training) and inputs (for gradient-ascent
//! misreport searches), and an adaptive-moment optimizer. Everything is dense
//! `f64`; the mechanism networks are tiny (≈50K parameters), so clarity and
//! exactness win over throughput tricks.
//!
//! Conventions:
//!
//! * Inputs and outputs are `batch × width` matrices; a single sample is a
//!   one-row batch.
//! * Weights are stored `out × in`, so a layer computes
//!   `y = x · Wᵀ + b` row-wise.
//! * Hidden activations are ReLU; the output activation is configurable
//!   ([`OutputActivation`]). Column-structured softmax over reshaped outputs
//!   lives in [`softmax_columns`] because only the caller knows the `N×m`
//!   geometry of a flattened output.
//!
//! Gradient correctness is enforced by finite-difference checks in the test
//! suite (central differences, `h = 1e-5`, relative tolerance `1e-4`) over
//! random architectures, including every configuration the auction networks
//! use.

mod adam;
mod checkpoint;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    checkpoint_hash, parse_checkpoint, read_checkpoint, render_checkpoint, write_checkpoint,
    CheckpointSection,
};

use ndarray::{Array1, Array2, Axis};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};

// ===== Types =====

/// Output-layer activation. Hidden layers are always ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    /// Raw affine output (used when a structured nonlinearity is applied
    /// outside, e.g. column softmax over a reshaped output).
    Identity,
    /// Elementwise logistic sigmoid.
    Sigmoid,
    /// Softmax over each output row (the flat output vector of one sample).
    Softmax,
}

impl OutputActivation {
    /// Canonical checkpoint spelling.
    pub fn as_str(&self) -> &'static str {
        match self {
            OutputActivation::Identity => "identity",
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Softmax => "softmax",
        }
    }

    /// Parses the checkpoint spelling.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(OutputActivation::Identity),
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "softmax" => Ok(OutputActivation::Softmax),
            other => Err(Error::invalid(format!("unknown activation '{other}'"))),
        }
    }
}

/// One dense layer: `out × in` weight matrix plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Weight matrix, `out × in`.
    pub weight: Array2<f64>,
    /// Bias vector, length `out`.
    pub bias: Array1<f64>,
}

/// A multilayer perceptron with ReLU hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// Widths `[input, hidden…, output]`.
    pub layer_dims: Vec<usize>,
    /// Dense layers; `layers.len() == layer_dims.len() - 1`.
    pub layers: Vec<Layer>,
    /// Activation applied to the final affine output.
    pub output_activation: OutputActivation,
}

/// Cached per-layer activations from a forward pass, consumed by backward.
///
/// `activations[0]` is the input batch; `activations[ℓ]` for `1 ≤ ℓ < L` is
/// the post-ReLU output of layer `ℓ`; `activations[L]` is the final output
/// after the output activation.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Activation matrices, one per layer boundary.
    pub activations: Vec<Array2<f64>>,
}

/// Parameter gradient for one layer, mirroring [`Layer`] shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    /// Gradient of the loss with respect to the layer's weight matrix.
    pub weight: Array2<f64>,
    /// Gradient with respect to the bias.
    pub bias: Array1<f64>,
}

/// Full gradient bundle from a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per-layer parameter gradients (empty when the caller requested an
    /// input-only backward pass).
    pub layers: Vec<LayerGrad>,
    /// Gradient with respect to the input batch, `batch × in`.
    pub input_grad: Array2<f64>,
}

// ===== Construction =====

impl Mlp {
    /// Builds a network with fan-balanced uniform weight init
    /// (`±√(6/(fan_in+fan_out))`) and zero biases, deterministically from the
    /// seed.
    pub fn new(layer_dims: &[usize], output_activation: OutputActivation, seed: u64) -> Self {
        assert!(
            layer_dims.len() >= 2 && layer_dims.iter().all(|&d| d > 0),
            "need at least input and output widths, all positive"
        );
        let mut rng = StdRng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-bound..bound));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Mlp {
            layer_dims: layer_dims.to_vec(),
            layers,
            output_activation,
        }
    }

    /// Input width.
    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    /// Output width.
    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Forward pass for a `batch × in` input. Returns the `batch × out`
    /// output and the tape needed for [`Mlp::backward`].
    pub fn forward(&self, input: &Array2<f64>) -> Result<(Array2<f64>, Tape)> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dim(format!(
                "input width {} but network expects {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut z = activations[idx].dot(&layer.weight.t());
            z += &layer.bias;
            if idx + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            } else {
                apply_output_activation(&mut z, self.output_activation);
            }
            activations.push(z);
        }
        let output = activations.last().unwrap().clone();
        Ok((output, Tape { activations }))
    }

    /// Backward pass computing parameter gradients and the input gradient.
    ///
    /// `output_grad` is the loss gradient with respect to the network output
    /// (after the output activation), shaped like the forward output.
    pub fn backward(&self, tape: &Tape, output_grad: &Array2<f64>) -> Result<Gradients> {
        self.backward_select(tape, output_grad, true)
    }

    /// Backward pass computing only the input gradient (used by the misreport
    /// ascent loop, which never updates parameters). Roughly halves the cost.
    pub fn backward_input_only(&self, tape: &Tape, output_grad: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.backward_select(tape, output_grad, false)?.input_grad)
    }

    /// Shared backward implementation; `want_params` selects whether weight
    /// and bias gradients are materialized.
    pub fn backward_select(
        &self,
        tape: &Tape,
        output_grad: &Array2<f64>,
        want_params: bool,
    ) -> Result<Gradients> {
        let n_layers = self.layers.len();
        if tape.activations.len() != n_layers + 1 {
            return Err(Error::invalid("tape does not match this network"));
        }
        let output = &tape.activations[n_layers];
        if output_grad.dim() != output.dim() {
            return Err(Error::dim(format!(
                "output_grad {:?} vs output {:?}",
                output_grad.dim(),
                output.dim()
            )));
        }
        // Gradient through the output activation.
        let mut delta = match self.output_activation {
            OutputActivation::Identity => output_grad.clone(),
            OutputActivation::Sigmoid => {
                let mut d = output_grad.clone();
                d.zip_mut_with(output, |g, &y| *g *= y * (1.0 - y));
                d
            }
            OutputActivation::Softmax => {
                let mut d = Array2::zeros(output.raw_dim());
                for ((mut drow, grow), yrow) in d
                    .rows_mut()
                    .into_iter()
                    .zip(output_grad.rows())
                    .zip(output.rows())
                {
                    let dot = grow.dot(&yrow);
                    for ((dv, &g), &y) in drow.iter_mut().zip(grow.iter()).zip(yrow.iter()) {
                        *dv = y * (g - dot);
                    }
                }
                d
            }
        };

        let mut layer_grads: Vec<LayerGrad> = Vec::with_capacity(if want_params { n_layers } else { 0 });
        for idx in (0..n_layers).rev() {
            let layer = &self.layers[idx];
            let prev_act = &tape.activations[idx];
            if want_params {
                layer_grads.push(LayerGrad {
                    weight: delta.t().dot(prev_act),
                    bias: delta.sum_axis(Axis(0)),
                });
            }
            let mut prev_grad = delta.dot(&layer.weight);
            if idx > 0 {
                // ReLU gate: a unit passed gradient iff its output was positive.
                prev_grad.zip_mut_with(prev_act, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            delta = prev_grad;
        }
        layer_grads.reverse();
        Ok(Gradients {
            layers: layer_grads,
            input_grad: delta,
        })
    }
}

// ===== Elementwise and structured activations =====

fn apply_output_activation(z: &mut Array2<f64>, act: OutputActivation) {
    match act {
        OutputActivation::Identity => {}
        OutputActivation::Sigmoid => z.mapv_inplace(sigmoid),
        OutputActivation::Softmax => {
            for mut row in z.rows_mut() {
                softmax_slice_inplace(row.as_slice_mut().expect("row is contiguous"));
            }
        }
    }
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// In-place stable softmax of a slice (max-subtraction form).
fn softmax_slice_inplace(xs: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Column-wise softmax of an `N×m` logit matrix: each column becomes a
/// probability vector over the `N` rows. Uses max-subtraction so arbitrarily
/// large logits cannot overflow.
pub fn softmax_columns(logits: &Array2<f64>) -> Array2<f64> {
    let (n, m) = logits.dim();
    let mut out = logits.clone();
    for j in 0..m {
        let mut col = out.column_mut(j);
        let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in col.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in col.iter_mut() {
            *v /= sum;
        }
        let _ = n;
    }
    out
}

/// Backward rule for [`softmax_columns`]: given the softmax output `z` and the
/// loss gradient with respect to `z`, returns the gradient with respect to the
/// logits. Each column is an independent softmax.
pub fn softmax_columns_backward(z: &Array2<f64>, grad_z: &Array2<f64>) -> Array2<f64> {
    let (n, m) = z.dim();
    let mut out = Array2::zeros((n, m));
    for j in 0..m {
        let zc = z.column(j);
        let gc = grad_z.column(j);
        let dot: f64 = zc.iter().zip(gc.iter()).map(|(&z, &g)| z * g).sum();
        for i in 0..n {
            out[(i, j)] = zc[i] * (gc[i] - dot);
        }
    }
    out
}
