//! Projected-gradient misreport search.
//!
//! Finds, for each requested client, the bid deviation that most improves
//! their utility under the learned mechanism, by ascending the utility's
//! input gradient. Deviations live in the box `[0, b_max]^m` with `b_max`
//! twice the profile's largest truthful bid; the starting point is uniform in
//! the box. The reported quantity is the best improvement over all `R`
//! iterates (including the start), floored at zero.
//!
//! Population self-consistency: when a client deviates, the population's mean
//! bid moves with them (`ν' = ν + (b'_i − b_i)/N`), and the ascent gradient
//! flows through that mean-field row as well. Both couplings can be switched
//! off for ablations.
//!
//! The value-baselined variant walks the *identical* trajectory and only
//! replaces the recorded utility differences with advantage differences
//! `A = u − Φ̂(b, ν)`, so a zero critic reproduces the plain estimator
//! bit-for-bit.

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::diffnet::Mlp;
use crate::error::{Error, Result};
use crate::market::BidProfile;
use crate::mechanism::{backward_batch, forward_batch, MechanismParams};
use crate::seeding::derive_seed;

use super::{utilities, BatchData, TrainConfig};

/// Seed-path tag for misreport initialization.
pub(crate) const TAG_PGA: u64 = 2;

/// Arguments to the batched misreport search.
pub(crate) struct PgaCoreArgs<'a> {
    pub params: &'a MechanismParams,
    pub batch: &'a BatchData,
    /// Requested `(profile index, client index)` pairs.
    pub clients: &'a [(usize, usize)],
    /// True scalar valuations, `L×N`.
    pub valuations: &'a Array2<f64>,
    /// Truthful utilities under the current parameters, `L×N`.
    pub truthful_utility: &'a Array2<f64>,
    pub budget: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Whether the mean-field row is part of the network input at all.
    pub use_mean_field: bool,
    /// Whether deviations shift the mean-field row self-consistently.
    pub mfg_update: bool,
    /// Present → also record advantage differences along the trajectory.
    pub critic: Option<&'a Mlp>,
    /// Record per-iterate contribution traces.
    pub record_trace: bool,
    pub seed: u64,
}

/// Result of the batched search, indexed like the request's client list.
pub(crate) struct PgaCoreResult {
    /// Best utility difference per request (not floored).
    pub gains: Vec<f64>,
    /// Best advantage difference per request (only with a critic).
    pub adv_gains: Option<Vec<f64>>,
    /// Misreport achieving the best utility difference, `m` values each.
    pub misreports: Vec<Vec<f64>>,
    /// Per-iterate utility differences (only when tracing).
    pub utility_traces: Option<Vec<Vec<f64>>>,
    /// Per-iterate advantage differences (tracing plus critic).
    pub advantage_traces: Option<Vec<Vec<f64>>>,
}

pub(crate) fn pga_core(args: &PgaCoreArgs) -> Result<PgaCoreResult> {
    let n = args.batch.n_clients;
    let m = args.batch.n_items;
    let nm = n * m;
    let width = (n + 1) * m;
    let rows = args.clients.len();
    if args.steps == 0 {
        return Err(Error::invalid("misreport search needs at least one step"));
    }
    for &(l, i) in args.clients {
        if l >= args.batch.batch_len() || i >= n {
            return Err(Error::invalid(format!(
                "client request ({l}, {i}) out of range"
            )));
        }
    }

    // Deviation input rows, their declared budgets, the ascent iterates, and
    // the per-row box bounds.
    let mut dev = Array2::zeros((rows, width));
    let mut dev_eps = Array2::zeros((rows, nm));
    let mut x = Array2::zeros((rows, m));
    let mut bmax = vec![0.0_f64; rows];
    for (r, &(l, i)) in args.clients.iter().enumerate() {
        for k in 0..nm {
            dev[(r, k)] = args.batch.bids[(l, k)];
            dev_eps[(r, k)] = args.batch.epsilons[(l, k)];
        }
        if args.use_mean_field {
            for j in 0..m {
                dev[(r, nm + j)] = args.batch.mean_field[(l, j)];
            }
        }
        let top = args
            .batch
            .bids
            .row(l)
            .iter()
            .cloned()
            .fold(0.0_f64, f64::max);
        bmax[r] = (2.0 * top).max(1e-9);
        let mut rng = StdRng::seed_from_u64(derive_seed(args.seed, &[TAG_PGA, l as u64, i as u64]));
        for j in 0..m {
            x[(r, j)] = rng.gen_range(0.0..bmax[r]);
        }
    }

    // Critic value at the truthful state, fixed for the whole search.
    let phi_truth: Option<Array1<f64>> = match args.critic {
        Some(critic) => {
            let mut t_in = Array2::zeros((rows, 2 * m));
            for (r, &(l, i)) in args.clients.iter().enumerate() {
                for j in 0..m {
                    t_in[(r, j)] = args.batch.bids[(l, i * m + j)];
                    t_in[(r, m + j)] = if args.use_mean_field {
                        args.batch.mean_field[(l, j)]
                    } else {
                        0.0
                    };
                }
            }
            let (out, _) = critic.forward(&t_in)?;
            Some(out.column(0).to_owned())
        }
        None => None,
    };

    let shift = if args.use_mean_field && args.mfg_update {
        1.0 / n as f64
    } else {
        0.0
    };

    let mut gains = vec![f64::NEG_INFINITY; rows];
    let mut adv_gains = vec![f64::NEG_INFINITY; rows];
    let mut misreports = vec![vec![0.0; m]; rows];
    let mut utility_traces: Vec<Vec<f64>> = vec![Vec::new(); rows];
    let mut advantage_traces: Vec<Vec<f64>> = vec![Vec::new(); rows];

    for step in 0..args.steps {
        // Write the current iterates (and shifted mean rows) into the batch.
        for (r, &(l, i)) in args.clients.iter().enumerate() {
            for j in 0..m {
                dev[(r, i * m + j)] = x[(r, j)];
                if shift > 0.0 {
                    dev[(r, nm + j)] = args.batch.mean_field[(l, j)]
                        + (x[(r, j)] - args.batch.bids[(l, i * m + j)]) * shift;
                }
            }
        }

        let fwd = forward_batch(args.params, &dev, &dev_eps, args.budget)?;

        let phi_mis: Option<Array1<f64>> = match args.critic {
            Some(critic) => {
                let mut c_in = Array2::zeros((rows, 2 * m));
                for (r, _) in args.clients.iter().enumerate() {
                    for j in 0..m {
                        c_in[(r, j)] = x[(r, j)];
                        c_in[(r, m + j)] = dev[(r, nm + j)];
                    }
                }
                let (out, _) = critic.forward(&c_in)?;
                Some(out.column(0).to_owned())
            }
            None => None,
        };

        for (r, &(l, i)) in args.clients.iter().enumerate() {
            let v = args.valuations[(l, i)];
            let u_mis = fwd.projected_payments[(r, i)] - v * fwd.epsilon_out[(r, i)];
            let gain = u_mis - args.truthful_utility[(l, i)];
            if gain > gains[r] {
                gains[r] = gain;
                for j in 0..m {
                    misreports[r][j] = x[(r, j)];
                }
            }
            if args.record_trace {
                utility_traces[r].push(gain);
            }
            if let (Some(pm), Some(pt)) = (&phi_mis, &phi_truth) {
                let adv = gain - (pm[r] - pt[r]);
                if adv > adv_gains[r] {
                    adv_gains[r] = adv;
                }
                if args.record_trace {
                    advantage_traces[r].push(adv);
                }
            }
        }

        if step + 1 < args.steps {
            let mut grad_pay = Array2::zeros((rows, n));
            let mut grad_eps = Array2::zeros((rows, n));
            for (r, &(l, i)) in args.clients.iter().enumerate() {
                grad_pay[(r, i)] = 1.0;
                grad_eps[(r, i)] = -args.valuations[(l, i)];
            }
            let grads = backward_batch(args.params, &fwd, &grad_pay, &grad_eps, false)?;
            let ig = &grads.header.input_grad;
            for (r, &(_, i)) in args.clients.iter().enumerate() {
                for j in 0..m {
                    let g = ig[(r, i * m + j)] + shift * ig[(r, nm + j)];
                    x[(r, j)] = (x[(r, j)] + args.step_size * g).clamp(0.0, bmax[r]);
                }
            }
        }
    }

    Ok(PgaCoreResult {
        gains,
        adv_gains: args.critic.map(|_| adv_gains),
        misreports,
        utility_traces: args.record_trace.then_some(utility_traces),
        advantage_traces: (args.record_trace && args.critic.is_some()).then_some(advantage_traces),
    })
}

// ===== Single-client public API =====

/// Per-iterate record of one misreport search.
#[derive(Debug, Clone)]
pub struct RegretTrace {
    /// Floored best improvement.
    pub regret: f64,
    /// Misreport achieving the best (pre-floor) improvement.
    pub best_misreport: Array1<f64>,
    /// One contribution per PGA iterate.
    pub contributions: Vec<f64>,
}

fn single_client_search(
    params: &MechanismParams,
    critic: Option<&Mlp>,
    profile: &BidProfile,
    budget: f64,
    client: usize,
    config: &TrainConfig,
    record_trace: bool,
) -> Result<PgaCoreResult> {
    if client >= profile.n_clients {
        return Err(Error::invalid(format!(
            "client {client} out of range for {} clients",
            profile.n_clients
        )));
    }
    let batch = BatchData::from_profiles(std::slice::from_ref(profile))?;
    let aug = batch.augmented(config.use_mean_field);
    let fwd = forward_batch(params, &aug, &batch.epsilons, budget)?;
    let valuations = batch.valuations();
    let truthful = utilities(&fwd.projected_payments, &fwd.epsilon_out, &valuations);
    pga_core(&PgaCoreArgs {
        params,
        batch: &batch,
        clients: &[(0, client)],
        valuations: &valuations,
        truthful_utility: &truthful,
        budget,
        steps: config.pga_steps,
        step_size: config.pga_step_size,
        use_mean_field: config.use_mean_field,
        mfg_update: config.mfg_update_in_pga,
        critic,
        record_trace,
        seed: config.seed,
    })
}

/// Best-response regret of one client: the largest utility improvement any
/// discovered misreport achieves, floored at zero, plus that misreport.
pub fn pga_regret(
    params: &MechanismParams,
    profile: &BidProfile,
    budget: f64,
    client: usize,
    config: &TrainConfig,
) -> Result<(f64, Array1<f64>)> {
    let res = single_client_search(params, None, profile, budget, client, config, false)?;
    Ok((
        res.gains[0].max(0.0),
        Array1::from_vec(res.misreports[0].clone()),
    ))
}

/// Like [`pga_regret`] but also returns the per-iterate utility differences.
pub fn pga_regret_trace(
    params: &MechanismParams,
    profile: &BidProfile,
    budget: f64,
    client: usize,
    config: &TrainConfig,
) -> Result<RegretTrace> {
    let res = single_client_search(params, None, profile, budget, client, config, true)?;
    Ok(RegretTrace {
        regret: res.gains[0].max(0.0),
        best_misreport: Array1::from_vec(res.misreports[0].clone()),
        contributions: res.utility_traces.unwrap().remove(0),
    })
}

/// Value-baselined regret: identical search trajectory, but the recorded
/// quantity is the advantage difference `A(b') − A(b)` with
/// `A = u − Φ̂(bid, mean-field bid)`.
pub fn value_baselined_regret(
    params: &MechanismParams,
    critic: Option<&Mlp>,
    profile: &BidProfile,
    budget: f64,
    client: usize,
    config: &TrainConfig,
) -> Result<f64> {
    let critic = critic.ok_or_else(|| Error::invalid("value-baselined regret needs a critic"))?;
    let res = single_client_search(params, Some(critic), profile, budget, client, config, false)?;
    Ok(res.adv_gains.unwrap()[0].max(0.0))
}

/// Tracing variant of [`value_baselined_regret`].
pub fn value_baselined_regret_trace(
    params: &MechanismParams,
    critic: Option<&Mlp>,
    profile: &BidProfile,
    budget: f64,
    client: usize,
    config: &TrainConfig,
) -> Result<RegretTrace> {
    let critic = critic.ok_or_else(|| Error::invalid("value-baselined regret needs a critic"))?;
    let res = single_client_search(params, Some(critic), profile, budget, client, config, true)?;
    Ok(RegretTrace {
        regret: res.adv_gains.unwrap()[0].max(0.0),
        best_misreport: Array1::from_vec(res.misreports[0].clone()),
        contributions: res.advantage_traces.unwrap().remove(0),
    })
}

/// Self-consistent mean-field update after one client's misreport: each
/// coordinate moves by `(new − old)/n`. With a single client the mean *is*
/// that client's bid, so the new bid is returned as-is.
pub fn misreport_mean_field(
    mean_field: &Array1<f64>,
    old_bid: &Array1<f64>,
    new_bid: &Array1<f64>,
    n_clients: usize,
) -> Result<Array1<f64>> {
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be >= 1"));
    }
    if mean_field.len() != old_bid.len() || old_bid.len() != new_bid.len() {
        return Err(Error::dim("mean-field update arguments must share one width"));
    }
    if n_clients == 1 {
        return Ok(new_bid.clone());
    }
    Ok(mean_field + &((new_bid - old_bid) / n_clients as f64))
}
