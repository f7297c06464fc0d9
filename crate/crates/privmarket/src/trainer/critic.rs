//! Value-estimate (critic) fitting against one-step Bellman targets.
//!
//! The critic `Φ̂(b, ν)` estimates the value of occupying state `(own bid,
//! population mean bid)`. Its regression target is the one-step optimality
//! backup: the best over deviations `b'` of immediate mean-field reward
//! (expected payment minus privacy cost at the granted exposure) plus the
//! discounted critic value at the next state, whose population mean `ν'` is
//! frozen from the current batch. The inner maximization reuses the same
//! projected-ascent routine as the misreport search, with common random
//! numbers across iterates (opponent sets drawn once per target).

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::diffnet::Mlp;
use crate::error::{Error, Result};
use crate::market::BidProfile;
use crate::mechanism::{backward_batch, forward_batch, MechanismParams};
use crate::seeding::derive_seed;

use super::{adam_mse_step, BatchData, TrainConfig};

/// Seed-path tag for Bellman-target randomness.
pub(crate) const TAG_BELLMAN: u64 = 4;

/// One critic regression state.
#[derive(Debug, Clone)]
pub struct CriticState {
    /// Own bid, length `m`.
    pub bid: Array1<f64>,
    /// Population mean bid at the state, length `m`.
    pub mean_field: Array1<f64>,
    /// True per-unit privacy valuation (scalar cost rate).
    pub valuation: f64,
    /// Declared per-item budgets, length `m`.
    pub agent_eps: Array1<f64>,
    /// Frozen next-state population mean, length `m`.
    pub next_mean_field: Array1<f64>,
}

/// Builds critic states (and their opponent pools) from a truthful batch:
/// each pick `(profile, client)` becomes one state whose next-state mean
/// field is the following profile's mean bid.
pub fn states_from_batch(
    batch: &BatchData,
    picks: &[(usize, usize)],
    use_mean_field: bool,
) -> Result<(Vec<CriticState>, Vec<BidProfile>)> {
    let n = batch.n_clients;
    let m = batch.n_items;
    let len = batch.batch_len();
    let valuations = batch.valuations();
    let mut states = Vec::with_capacity(picks.len());
    let mut pools = Vec::with_capacity(picks.len());
    for &(l, i) in picks {
        if l >= len || i >= n {
            return Err(Error::invalid(format!("critic pick ({l}, {i}) out of range")));
        }
        let slice = |row: usize, mat: &Array2<f64>| -> Array1<f64> {
            Array1::from_iter((0..m).map(|j| mat[(row, i * m + j)]))
        };
        let mean_of = |row: usize| -> Array1<f64> {
            if use_mean_field {
                batch.mean_field.row(row).to_owned()
            } else {
                Array1::zeros(m)
            }
        };
        states.push(CriticState {
            bid: slice(l, &batch.bids),
            mean_field: mean_of(l),
            valuation: valuations[(l, i)],
            agent_eps: slice(l, &batch.epsilons),
            next_mean_field: mean_of((l + 1) % len),
        });
        pools.push(batch.profile(l)?);
    }
    Ok((states, pools))
}

/// Computes one-step optimality targets for a set of states by projected
/// ascent over the deviation bid, batched across states.
pub fn bellman_targets(
    params: &MechanismParams,
    critic: &Mlp,
    states: &[CriticState],
    pools: &[BidProfile],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = params.n_clients_trained;
    let m = params.n_items;
    let nm = n * m;
    let width = (n + 1) * m;
    let s_count = states.len();
    let k = config.mc_opponents;
    if pools.len() != s_count {
        return Err(Error::dim("one pool per critic state required"));
    }
    if s_count == 0 {
        return Ok(Vec::new());
    }
    let discount = (-config.discount).exp();

    // Frozen opponent sets: rows grouped by state, K per state. The agent's
    // bid columns (slot 0) and the recomputed mean row are rewritten per
    // ascent step; opponent entries stay fixed (common random numbers).
    let rows = s_count * k;
    let mut inputs = Array2::zeros((rows, width));
    let mut eps = Array2::zeros((rows, nm));
    let mut opp_sum: Array2<f64> = Array2::zeros((rows, m));
    let mut x = Array2::zeros((s_count, m));
    let mut bmax = vec![0.0_f64; s_count];
    for (s, (state, pool)) in states.iter().zip(pools).enumerate() {
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, &[TAG_BELLMAN, s as u64]));
        let top = pool.bids.iter().cloned().fold(0.0_f64, f64::max);
        bmax[s] = (2.0 * top).max(1e-9);
        for j in 0..m {
            x[(s, j)] = rng.gen_range(0.0..bmax[s]);
        }
        for rk in 0..k {
            let r = s * k + rk;
            for j in 0..m {
                eps[(r, j)] = state.agent_eps[j];
            }
            for slot in 1..n {
                let src = rng.gen_range(0..n);
                for j in 0..m {
                    inputs[(r, slot * m + j)] = pool.bids[(src, j)];
                    eps[(r, slot * m + j)] = pool.epsilons[(src, j)];
                    opp_sum[(r, j)] += pool.bids[(src, j)];
                }
            }
        }
    }

    let mut best = vec![f64::NEG_INFINITY; s_count];
    for step in 0..config.pga_steps {
        for s in 0..s_count {
            for rk in 0..k {
                let r = s * k + rk;
                for j in 0..m {
                    inputs[(r, j)] = x[(s, j)];
                    inputs[(r, nm + j)] = (opp_sum[(r, j)] + x[(s, j)]) / n as f64;
                }
            }
        }
        let fwd = forward_batch(params, &inputs, &eps, config.budget)?;

        // Critic value at (x, ν′), with its input gradient for the ascent.
        let mut c_in = Array2::zeros((s_count, 2 * m));
        for (s, state) in states.iter().enumerate() {
            for j in 0..m {
                c_in[(s, j)] = x[(s, j)];
                c_in[(s, m + j)] = state.next_mean_field[j];
            }
        }
        let (c_out, c_tape) = critic.forward(&c_in)?;

        for (s, state) in states.iter().enumerate() {
            let (mut pay, mut exposure) = (0.0, 0.0);
            for rk in 0..k {
                let r = s * k + rk;
                pay += fwd.projected_payments[(r, 0)];
                exposure += fwd.epsilon_out[(r, 0)];
            }
            pay /= k as f64;
            exposure /= k as f64;
            let value = pay - state.valuation * exposure + discount * c_out[(s, 0)];
            if value > best[s] {
                best[s] = value;
            }
        }

        if step + 1 < config.pga_steps {
            let mut grad_pay = Array2::zeros((rows, n));
            let mut grad_eps = Array2::zeros((rows, n));
            for (s, state) in states.iter().enumerate() {
                for rk in 0..k {
                    let r = s * k + rk;
                    grad_pay[(r, 0)] = 1.0 / k as f64;
                    grad_eps[(r, 0)] = -state.valuation / k as f64;
                }
            }
            let grads = backward_batch(params, &fwd, &grad_pay, &grad_eps, false)?;
            let ig = &grads.header.input_grad;
            let ones = Array2::ones((s_count, 1));
            let c_grad = critic.backward_input_only(&c_tape, &ones)?;
            for s in 0..s_count {
                for j in 0..m {
                    let mut g = discount * c_grad[(s, j)];
                    for rk in 0..k {
                        let r = s * k + rk;
                        g += ig[(r, j)] + ig[(r, nm + j)] / n as f64;
                    }
                    x[(s, j)] = (x[(s, j)] + config.pga_step_size * g).clamp(0.0, bmax[s]);
                }
            }
        }
    }
    Ok(best)
}

/// Mean-squared residual between the critic and its one-step Bellman backup
/// on a batch of `(bid, mean-field)` states.
///
/// The pairs carry no declared budgets or pool, so the empirical pool is
/// assembled by cycling the batch's bids into the mechanism's `N` slots with
/// unit declared budgets, and each pair's valuation proxy is its mean bid.
pub fn critic_loss(
    critic: &Mlp,
    batch: &[(Array1<f64>, Array1<f64>)],
    params: &MechanismParams,
    config: &TrainConfig,
) -> Result<f64> {
    let n = params.n_clients_trained;
    let m = params.n_items;
    if batch.is_empty() {
        return Err(Error::invalid("critic loss needs a nonempty batch"));
    }
    for (bid, nu) in batch {
        if bid.len() != m || nu.len() != m {
            return Err(Error::dim(format!(
                "state widths {}/{} vs n_items {m}",
                bid.len(),
                nu.len()
            )));
        }
    }
    let pool_bids = Array2::from_shape_fn((n, m), |(slot, j)| batch[slot % batch.len()].0[j]);
    let pool = BidProfile::new(pool_bids, Array2::ones((n, m)))?;
    let states: Vec<CriticState> = batch
        .iter()
        .enumerate()
        .map(|(s, (bid, nu))| CriticState {
            bid: bid.clone(),
            mean_field: nu.clone(),
            valuation: bid.sum() / m as f64,
            agent_eps: Array1::ones(m),
            next_mean_field: batch[(s + 1) % batch.len()].1.clone(),
        })
        .collect();
    let pools = vec![pool; states.len()];
    let targets = bellman_targets(params, critic, &states, &pools, config, config.seed)?;

    let mut c_in = Array2::zeros((states.len(), 2 * m));
    for (s, state) in states.iter().enumerate() {
        for j in 0..m {
            c_in[(s, j)] = state.bid[j];
            c_in[(s, m + j)] = state.mean_field[j];
        }
    }
    let (out, _) = critic.forward(&c_in)?;
    let mse = states
        .iter()
        .enumerate()
        .map(|(s, _)| {
            let d = out[(s, 0)] - targets[s];
            d * d
        })
        .sum::<f64>()
        / states.len() as f64;
    Ok(mse)
}

/// Fits the critic toward its Bellman backup on a fixed mechanism:
/// alternates target refresh (frozen critic) with gradient steps on the
/// squared residual. Returns the post-round mean-squared residuals.
pub fn fit_critic(
    critic: &mut Mlp,
    params: &MechanismParams,
    states: &[CriticState],
    pools: &[BidProfile],
    config: &TrainConfig,
    rounds: usize,
    steps_per_round: usize,
) -> Result<Vec<f64>> {
    let m = params.n_items;
    let mut c_in = Array2::zeros((states.len(), 2 * m));
    for (s, state) in states.iter().enumerate() {
        for j in 0..m {
            c_in[(s, j)] = state.bid[j];
            c_in[(s, m + j)] = state.mean_field[j];
        }
    }
    let mut adam = crate::diffnet::AdamState::new(critic, config.learning_rate);
    let mut trace = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let frozen = critic.clone();
        let targets = bellman_targets(
            params,
            &frozen,
            states,
            pools,
            config,
            derive_seed(config.seed, &[TAG_BELLMAN, 1_000_000 + round as u64]),
        )?;
        let target_arr = Array1::from_vec(targets);
        let mut last = 0.0;
        for _ in 0..steps_per_round {
            last = adam_mse_step(critic, &mut adam, &c_in, &target_arr)?;
        }
        trace.push(last);
    }
    Ok(trace)
}
