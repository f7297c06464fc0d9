//! Synthetic classification task and local client training.
//!
//! A Gaussian class-centroid mixture: `n_classes` centroids along coordinate
//! axes at separation `CENTROID_SEPARATION`, unit isotropic noise. Client
//! datasets are non-IID via Dirichlet-drawn class proportions; the shared
//! test set is balanced and drawn fresh. The model is a linear softmax
//! classifier (weights plus bias per class), small enough that hundreds of
//! federated rounds run in seconds.

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Dirichlet, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::seeding::derive_seed;

use super::GlobalModel;

/// Input dimensionality.
pub const FEATURE_DIM: usize = 20;
/// Number of classes.
pub const N_CLASSES: usize = 4;
/// Distance of each class centroid from the origin along its axis.
pub const CENTROID_SEPARATION: f64 = 4.0;
/// Training samples per client.
pub const SAMPLES_PER_CLIENT: usize = 200;
/// Shared test-set size (balanced across classes).
pub const TEST_SAMPLES: usize = 1000;

/// Fixed synthetic federated dataset.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    /// Input dimensionality.
    pub feature_dim: usize,
    /// Number of classes.
    pub n_classes: usize,
    /// Class centroids, `n_classes × feature_dim`.
    pub centroids: Array2<f64>,
    /// Per-client `(features, labels)` datasets.
    pub client_data: Vec<(Array2<f64>, Vec<usize>)>,
    /// Concentration of the class-proportion draw (smaller = more skewed).
    pub dirichlet_alpha: f64,
    /// Held-out features, disjoint from all client data.
    pub test_features: Array2<f64>,
    /// Held-out labels.
    pub test_labels: Vec<usize>,
}

/// Number of scalar parameters of the linear softmax model for a task shape.
pub fn model_len(feature_dim: usize, n_classes: usize) -> usize {
    n_classes * (feature_dim + 1)
}

/// Builds the synthetic task for `n_clients` clients, deterministically from
/// the seed.
pub fn make_task(n_clients: usize, dirichlet_alpha: f64, seed: u64) -> Result<SyntheticTask> {
    if n_clients == 0 {
        return Err(Error::invalid("need at least one client"));
    }
    if !(dirichlet_alpha > 0.0) {
        return Err(Error::invalid("dirichlet_alpha must be positive"));
    }
    let centroids = Array2::from_shape_fn((N_CLASSES, FEATURE_DIM), |(c, d)| {
        if c == d {
            CENTROID_SEPARATION
        } else {
            0.0
        }
    });

    let draw =
        |rng: &mut StdRng, class: usize, features: &mut Array2<f64>, row: usize| {
            for d in 0..FEATURE_DIM {
                let noise: f64 = rng.sample(StandardNormal);
                features[(row, d)] = centroids[(class, d)] + noise;
            }
        };

    let mut client_data = Vec::with_capacity(n_clients);
    for client in 0..n_clients {
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, &[10, client as u64]));
        let dirichlet = Dirichlet::new(&vec![dirichlet_alpha; N_CLASSES])
            .map_err(|e| Error::invalid(format!("dirichlet: {e}")))?;
        let proportions: Vec<f64> = dirichlet.sample(&mut rng);
        let mut features = Array2::zeros((SAMPLES_PER_CLIENT, FEATURE_DIM));
        let mut labels = Vec::with_capacity(SAMPLES_PER_CLIENT);
        for row in 0..SAMPLES_PER_CLIENT {
            let u: f64 = rng.gen::<f64>();
            let mut acc = 0.0;
            let mut class = N_CLASSES - 1;
            for (c, &p) in proportions.iter().enumerate() {
                acc += p;
                if u < acc {
                    class = c;
                    break;
                }
            }
            draw(&mut rng, class, &mut features, row);
            labels.push(class);
        }
        client_data.push((features, labels));
    }

    let mut rng = StdRng::seed_from_u64(derive_seed(seed, &[11]));
    let mut test_features = Array2::zeros((TEST_SAMPLES, FEATURE_DIM));
    let mut test_labels = Vec::with_capacity(TEST_SAMPLES);
    for row in 0..TEST_SAMPLES {
        let class = row % N_CLASSES;
        draw(&mut rng, class, &mut test_features, row);
        test_labels.push(class);
    }

    Ok(SyntheticTask {
        feature_dim: FEATURE_DIM,
        n_classes: N_CLASSES,
        centroids,
        client_data,
        dirichlet_alpha,
        test_features,
        test_labels,
    })
}

// ===== Linear softmax model =====

fn logits(weights: &Array1<f64>, x: ndarray::ArrayView1<f64>, n_classes: usize, dim: usize) -> Vec<f64> {
    (0..n_classes)
        .map(|c| {
            let base = c * (dim + 1);
            let mut z = weights[base + dim]; // bias
            for d in 0..dim {
                z += weights[base + d] * x[d];
            }
            z
        })
        .collect()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy of the model on a dataset.
pub fn dataset_loss(
    weights: &Array1<f64>,
    features: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
) -> f64 {
    let dim = features.ncols();
    let mut total = 0.0;
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let mut z = logits(weights, row, n_classes, dim);
        softmax_in_place(&mut z);
        total += -(z[y].max(1e-300)).ln();
    }
    total / labels.len().max(1) as f64
}

/// Fraction of samples whose argmax logit matches the label.
pub fn accuracy(
    weights: &Array1<f64>,
    features: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
) -> f64 {
    let dim = features.ncols();
    let mut hits = 0usize;
    for (row, &y) in features.rows().into_iter().zip(labels) {
        let z = logits(weights, row, n_classes, dim);
        let pred = z
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(c, _)| c)
            .unwrap();
        if pred == y {
            hits += 1;
        }
    }
    hits as f64 / labels.len().max(1) as f64
}

/// Local minibatch SGD from the incoming global model.
///
/// Returns the locally updated parameter vector with the client's change
/// clipped to `clip_norm` in ℓ₂ (so zero epochs return the global model
/// unchanged, and any larger drift is rescaled to exactly `clip_norm`).
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    model: &GlobalModel,
    features: &Array2<f64>,
    labels: &[usize],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    clip_norm: f64,
    seed: u64,
) -> Result<Array1<f64>> {
    if labels.is_empty() || features.nrows() == 0 {
        return Err(Error::invalid("client dataset is empty"));
    }
    if features.nrows() != labels.len() {
        return Err(Error::dim(format!(
            "{} feature rows vs {} labels",
            features.nrows(),
            labels.len()
        )));
    }
    let dim = features.ncols();
    let n_classes = model.weights.len() / (dim + 1);
    if model.weights.len() != n_classes * (dim + 1) {
        return Err(Error::dim("model length does not match task shape"));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut weights = model.weights.clone();
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let batch = batch_size.max(1);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut grad: Array1<f64> = Array1::zeros(weights.len());
            for &idx in chunk {
                let x = features.row(idx);
                let y = labels[idx];
                let mut p = logits(&weights, x, n_classes, dim);
                softmax_in_place(&mut p);
                for (c, &pc) in p.iter().enumerate() {
                    let err = pc - if c == y { 1.0 } else { 0.0 };
                    let base = c * (dim + 1);
                    for d in 0..dim {
                        grad[base + d] += err * x[d];
                    }
                    grad[base + dim] += err;
                }
            }
            let scale = learning_rate / chunk.len() as f64;
            ndarray::Zip::from(&mut weights).and(&grad).for_each(|w, &g| *w -= scale * g);
        }
    }
    // Clip the client's drift.
    let mut delta = &weights - &model.weights;
    let norm = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm > clip_norm {
        delta.mapv_inplace(|d| d * clip_norm / norm);
    }
    Ok(&model.weights + &delta)
}
