//! Population-consistent payment targets and the alignment loss.
//!
//! A representative agent bidding `b` against opponents resampled from the
//! empirical pool sees an expected payment `p̃(b)`. The alignment loss pulls
//! each realized payment toward that population-level target: a per-entry
//! Huber term on scale-normalized residuals (weighted toward high-valuation
//! clients), plus an aggregate budget-relative moment penalty. Targets are
//! recomputed once per outer iteration and treated as constants, so their
//! gradient never reaches the parameters that generated them.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::market::BidProfile;
use crate::mechanism::{forward_batch, MechanismParams};
use crate::seeding::derive_seed;

use super::{BatchData, TrainConfig};

/// Seed-path tag for opponent resampling.
pub(crate) const TAG_ALIGN: u64 = 3;
/// Number of recent batches whose payments define the residual scales.
pub(crate) const PAYMENT_WINDOW_BATCHES: usize = 50;
/// Additive guard on the residual scale denominator.
pub(crate) const SCALE_GUARD: f64 = 1e-6;

/// Sliding window of per-client payment statistics over recent batches,
/// providing the residual scale `ς_i` (standard deviation of client `i`'s
/// payments across the window).
#[derive(Debug, Clone)]
pub struct PaymentWindow {
    entries: VecDeque<(Array1<f64>, Array1<f64>, usize)>,
    n_clients: usize,
    capacity: usize,
}

impl PaymentWindow {
    /// Empty window for `n_clients`, holding at most `capacity` batches.
    pub fn new(n_clients: usize, capacity: usize) -> Self {
        PaymentWindow {
            entries: VecDeque::with_capacity(capacity),
            n_clients,
            capacity,
        }
    }

    /// Records one batch of payments (`L×N`).
    pub fn push(&mut self, payments: &Array2<f64>) {
        let mut sums = Array1::zeros(self.n_clients);
        let mut sumsqs = Array1::zeros(self.n_clients);
        for row in payments.rows() {
            for i in 0..self.n_clients {
                sums[i] += row[i];
                sumsqs[i] += row[i] * row[i];
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((sums, sumsqs, payments.nrows()));
    }

    /// Per-client payment standard deviation over the window; 1.0 until at
    /// least two samples exist.
    pub fn scales(&self) -> Array1<f64> {
        let total: usize = self.entries.iter().map(|(_, _, c)| c).sum();
        if total < 2 {
            return Array1::ones(self.n_clients);
        }
        let mut out = Array1::zeros(self.n_clients);
        for i in 0..self.n_clients {
            let (mut s, mut sq) = (0.0, 0.0);
            for (sums, sumsqs, _) in &self.entries {
                s += sums[i];
                sq += sumsqs[i];
            }
            let mean = s / total as f64;
            let var = (sq / total as f64 - mean * mean).max(0.0);
            out[i] = var.sqrt();
        }
        out
    }
}

/// Expected payment and granted exposure of a representative agent bidding
/// `bid` with declared budgets `agent_eps`, averaged over `K` opponent sets
/// resampled (with replacement) from the pool's client rows. The agent
/// occupies slot 0; the pool's mean-field row is recomputed per sample.
pub fn mean_field_response(
    params: &MechanismParams,
    bid: &ArrayView1<f64>,
    agent_eps: &ArrayView1<f64>,
    pool: &BidProfile,
    k_samples: usize,
    budget: f64,
    rng: &mut StdRng,
) -> Result<(f64, f64)> {
    let n = params.n_clients_trained;
    let m = params.n_items;
    if k_samples == 0 {
        return Err(Error::invalid("need at least one opponent sample"));
    }
    if pool.n_clients != n || pool.n_items != m || bid.len() != m || agent_eps.len() != m {
        return Err(Error::dim(format!(
            "pool {}×{}, bid len {}, eps len {} vs mechanism {}×{}",
            pool.n_clients,
            pool.n_items,
            bid.len(),
            agent_eps.len(),
            n,
            m
        )));
    }
    let nm = n * m;
    let width = (n + 1) * m;
    let mut inputs = Array2::zeros((k_samples, width));
    let mut eps = Array2::zeros((k_samples, nm));
    for r in 0..k_samples {
        for j in 0..m {
            inputs[(r, j)] = bid[j];
            eps[(r, j)] = agent_eps[j];
        }
        for slot in 1..n {
            let src = rng.gen_range(0..n);
            for j in 0..m {
                inputs[(r, slot * m + j)] = pool.bids[(src, j)];
                eps[(r, slot * m + j)] = pool.epsilons[(src, j)];
            }
        }
        for j in 0..m {
            let mut mean = 0.0;
            for slot in 0..n {
                mean += inputs[(r, slot * m + j)];
            }
            inputs[(r, nm + j)] = mean / n as f64;
        }
    }
    let fwd = forward_batch(params, &inputs, &eps, budget)?;
    let pay = fwd.projected_payments.column(0).sum() / k_samples as f64;
    let exposure = fwd.epsilon_out.column(0).sum() / k_samples as f64;
    Ok((pay, exposure))
}

/// Expected payment seen by a representative agent bidding `bid` against the
/// empirical pool (payment component of [`mean_field_response`]; the agent's
/// declared budgets do not affect payments and default to the pool mean).
pub fn mean_field_payment(
    params: &MechanismParams,
    bid: &Array1<f64>,
    empirical_pool: &BidProfile,
    k_samples: usize,
    budget: f64,
    rng: &mut StdRng,
) -> Result<f64> {
    let m = params.n_items;
    let mut mean_eps = Array1::zeros(m);
    for j in 0..m {
        mean_eps[j] = empirical_pool.epsilons.column(j).sum() / empirical_pool.n_clients as f64;
    }
    let (pay, _) = mean_field_response(
        params,
        &bid.view(),
        &mean_eps.view(),
        empirical_pool,
        k_samples,
        budget,
        rng,
    )?;
    Ok(pay)
}

/// Per-entry weights for the alignment loss: valuations raised to the
/// configured exponent, normalized to unit mean over the batch.
pub(crate) fn alignment_weights(valuations: &Array2<f64>, exponent: f64) -> Array2<f64> {
    let mut w = valuations.mapv(|v| v.max(0.0).powf(exponent));
    let mean = w.sum() / w.len() as f64;
    if mean > 0.0 {
        w.mapv_inplace(|x| x / mean);
    } else {
        w.fill(1.0);
    }
    w
}

/// Value and payment-gradient of the alignment objective given realized
/// payments, constant targets, weights, and residual scales.
///
/// Returns `(loss, ∂loss/∂payments)` where the loss is the batch-mean
/// weighted Huber of normalized residuals plus `β` times the batch-mean
/// squared budget-relative aggregate residual.
pub(crate) fn alignment_value_grad(
    payments: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &Array2<f64>,
    scales: &Array1<f64>,
    config: &TrainConfig,
) -> (f64, Array2<f64>) {
    let (batch, n) = payments.dim();
    let delta = config.huber_delta;
    let total = (batch * n) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((batch, n));
    for l in 0..batch {
        let mut aggregate = 0.0;
        for i in 0..n {
            let residual = payments[(l, i)] - targets[(l, i)];
            aggregate += residual;
            let scale = scales[i] + SCALE_GUARD;
            let s = residual / scale;
            let (h, dh) = if s.abs() <= delta {
                (0.5 * s * s, s)
            } else {
                (delta * (s.abs() - 0.5 * delta), delta * s.signum())
            };
            loss += weights[(l, i)] * h / total;
            grad[(l, i)] += weights[(l, i)] * dh / (scale * total);
        }
        let rel = aggregate / config.budget;
        loss += config.moment_weight * rel * rel / batch as f64;
        let d_moment = config.moment_weight * 2.0 * rel / (config.budget * batch as f64);
        for i in 0..n {
            grad[(l, i)] += d_moment;
        }
    }
    (loss, grad)
}

/// Alignment objective of the current mechanism on a truthful batch against
/// precomputed constant targets. Gradient flows only through the realized
/// payments; the targets are data.
pub fn alignment_loss(
    params: &MechanismParams,
    batch: &BatchData,
    targets: &Array2<f64>,
    scales: &Array1<f64>,
    config: &TrainConfig,
) -> Result<f64> {
    let n = batch.n_clients;
    if targets.dim() != (batch.batch_len(), n) || scales.len() != n {
        return Err(Error::dim(format!(
            "targets {:?} / scales {} vs batch {}×{}",
            targets.dim(),
            scales.len(),
            batch.batch_len(),
            n
        )));
    }
    let aug = batch.augmented(config.use_mean_field);
    let fwd = forward_batch(params, &aug, &batch.epsilons, config.budget)?;
    let weights = alignment_weights(&batch.valuations(), config.weight_exponent);
    let (loss, _) = alignment_value_grad(&fwd.projected_payments, targets, &weights, scales, config);
    Ok(loss)
}

/// Computes the per-entry alignment targets for a truthful batch: each
/// client's bid is re-embedded as the representative agent against opponents
/// resampled from its own profile, and the mean projected payment over
/// `config.mc_opponents` resamples becomes that entry's target.
pub(crate) fn compute_alignment_targets(
    params: &MechanismParams,
    batch: &BatchData,
    config: &TrainConfig,
    outer_iter: usize,
) -> Result<Array2<f64>> {
    let n = batch.n_clients;
    let m = batch.n_items;
    let mut targets = Array2::zeros((batch.batch_len(), n));
    for l in 0..batch.batch_len() {
        let pool = batch.profile(l)?;
        for i in 0..n {
            let mut rng = StdRng::seed_from_u64(derive_seed(
                config.seed,
                &[TAG_ALIGN, outer_iter as u64, l as u64, i as u64],
            ));
            let bid = batch.bids.row(l);
            let eps = batch.epsilons.row(l);
            let bid_i = bid.slice(ndarray::s![i * m..(i + 1) * m]);
            let eps_i = eps.slice(ndarray::s![i * m..(i + 1) * m]);
            let (pay, _) = mean_field_response(
                params,
                &bid_i,
                &eps_i,
                &pool,
                config.mc_opponents,
                config.budget,
                &mut rng,
            )?;
            targets[(l, i)] = pay;
        }
    }
    Ok(targets)
}
