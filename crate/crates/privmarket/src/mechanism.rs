//! Learned auction mechanism: a population-context network over bids plus the
//! mean-field bid, with allocation and payment heads.
//!
//! The forward map for `N` clients and `m` privacy items:
//!
//! 1. The augmented input stacks every client's bid row with the population's
//!    mean bid row and flattens to `(N+1)·m` values.
//! 2. A shared header MLP produces an `N·m` context vector.
//! 3. The allocation head maps context to logits, reshaped `N×m`; a softmax
//!    **down each item column** yields allocation shares that sum to one per
//!    item, so budget-feasible sharing is built into the architecture.
//! 4. The payment head maps context through a sigmoid to per-entry payment
//!    fractions `p̂ ∈ (0,1)`; client `i`'s raw payment is `Σ_j p̂_ij·b_ij`,
//!    which can never exceed the client's own reported willingness.
//! 5. Payments are scaled by `1/max(1, Σp/B)` so the budget holds exactly.
//! 6. Each client's granted privacy exposure is the allocation-weighted sum
//!    of their declared per-item budgets: `ε_out_i = Σ_j z_ij·ε_ij`.
//!
//! Everything here is written batch-first: training evaluates thousands of
//! bid profiles (truthful plus deviation rows) per optimizer step, and the
//! misreport ascent needs input gradients through the whole pipeline. The
//! backward pass is derived by hand and validated against central finite
//! differences in the test suite.

use ndarray::{Array1, Array2};

use crate::audit;
use crate::diffnet::{
    parse_checkpoint, render_checkpoint, CheckpointSection, Gradients, Mlp, OutputActivation, Tape,
};
use crate::error::{Error, Result};
use crate::market::{AuctionOutcome, BidProfile};

/// Hidden width of the header and head MLPs.
pub const HIDDEN_WIDTH: usize = 128;
/// Hidden width of the value-estimate (critic) MLP.
pub const CRITIC_WIDTH: usize = 64;

/// All parameters of a learned mechanism for a fixed market size.
#[derive(Debug, Clone)]
pub struct MechanismParams {
    /// Shared context network: `(N+1)·m → 128 → 128 → 128 → N·m`.
    pub header: Mlp,
    /// Allocation head: `N·m → 128 → N·m` logits (column softmax applied
    /// outside the MLP, per item).
    pub alloc_head: Mlp,
    /// Payment-fraction head: `N·m → 128 → N·m` with sigmoid output.
    pub pay_head: Mlp,
    /// Per-client value estimator `(bid, mean-field bid) → value`, used for
    /// variance-reduced misreport search during training.
    pub critic: Mlp,
    /// Number of clients the parameter shapes commit to.
    pub n_clients_trained: usize,
    /// Number of privacy items per client.
    pub n_items: usize,
}

impl MechanismParams {
    /// Fresh networks for an `n_clients × n_items` market, deterministically
    /// initialized from `seed`.
    pub fn new(n_clients: usize, n_items: usize, seed: u64) -> Result<Self> {
        if n_clients == 0 || n_items == 0 {
            return Err(Error::invalid("market dimensions must be positive"));
        }
        let nm = n_clients * n_items;
        let aug = (n_clients + 1) * n_items;
        Ok(MechanismParams {
            header: Mlp::new(
                &[aug, HIDDEN_WIDTH, HIDDEN_WIDTH, HIDDEN_WIDTH, nm],
                OutputActivation::Identity,
                seed,
            ),
            alloc_head: Mlp::new(&[nm, HIDDEN_WIDTH, nm], OutputActivation::Identity, seed.wrapping_add(1)),
            pay_head: Mlp::new(&[nm, HIDDEN_WIDTH, nm], OutputActivation::Sigmoid, seed.wrapping_add(2)),
            critic: Mlp::new(
                &[2 * n_items, CRITIC_WIDTH, CRITIC_WIDTH, 1],
                OutputActivation::Identity,
                seed.wrapping_add(3),
            ),
            n_clients_trained: n_clients,
            n_items,
        })
    }

    /// Total scalar parameter count across all four networks.
    pub fn param_count(&self) -> usize {
        self.header.param_count()
            + self.alloc_head.param_count()
            + self.pay_head.param_count()
            + self.critic.param_count()
    }
}

/// Full diagnostic output of one mechanism evaluation on a single profile.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Header output (context embedding), one row per client, `N×m`.
    pub context: Array2<f64>,
    /// Allocation shares, `N×m`; every column sums to one.
    pub allocation: Array2<f64>,
    /// Payment fractions in `(0,1)`, `N×m`.
    pub pay_fractions: Array2<f64>,
    /// Pre-projection payments `Σ_j p̂_ij·b_ij`, length `N`.
    pub raw_payments: Array1<f64>,
    /// Budget-feasible payments after scaling, length `N`.
    pub projected_payments: Array1<f64>,
    /// Granted privacy exposure per client, length `N`.
    pub epsilon_out: Array1<f64>,
}

/// Flattens a profile into the `(N+1)·m` network input: bid rows in client
/// order, then the mean-field bid row.
pub fn build_augmented_input(profile: &BidProfile) -> Array1<f64> {
    let n = profile.n_clients;
    let m = profile.n_items;
    let mut out = Array1::zeros((n + 1) * m);
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = profile.bids[(i, j)];
        }
    }
    for j in 0..m {
        out[n * m + j] = profile.mean_field_bid[j];
    }
    out
}

// ===== Batched forward =====

/// Cached state of a batched forward pass: tapes for all three networks plus
/// the structured intermediate values the backward pass needs.
#[derive(Debug, Clone)]
pub struct BatchForward {
    /// Header tape (input rows are the augmented profiles).
    pub header_tape: Tape,
    /// Allocation-head tape.
    pub alloc_tape: Tape,
    /// Payment-head tape.
    pub pay_tape: Tape,
    /// Allocation shares per row, `B × N·m` (column softmax applied within
    /// each sample's `N×m` view).
    pub allocation: Array2<f64>,
    /// Payment fractions per row, `B × N·m`.
    pub pay_fractions: Array2<f64>,
    /// Pre-projection payments, `B × N`.
    pub raw_payments: Array2<f64>,
    /// Post-projection payments, `B × N`.
    pub projected_payments: Array2<f64>,
    /// Granted exposures, `B × N`.
    pub epsilon_out: Array2<f64>,
    /// Declared per-entry budgets used for exposures, `B × N·m`.
    pub epsilons: Array2<f64>,
    /// Budget used for the payment projection.
    pub budget: f64,
}

/// Gradients of a scalar loss with respect to mechanism parameters and the
/// augmented inputs.
#[derive(Debug, Clone)]
pub struct MechanismGradients {
    /// Header parameter gradients plus the input gradient. The input gradient
    /// (`B × (N+1)·m`) already includes the direct bid→payment path, so it is
    /// the complete derivative with respect to each augmented input entry.
    pub header: Gradients,
    /// Allocation-head parameter gradients (input part unused by callers).
    pub alloc_head: Gradients,
    /// Payment-head parameter gradients (input part unused by callers).
    pub pay_head: Gradients,
}

/// Runs the mechanism on a batch of augmented input rows.
///
/// * `inputs`: `B × (N+1)·m` augmented profiles (bids then mean-field row).
/// * `epsilons`: `B × N·m` declared budgets aligned with the bid entries.
///
/// Every row is recorded with the feasibility audit.
pub fn forward_batch(
    params: &MechanismParams,
    inputs: &Array2<f64>,
    epsilons: &Array2<f64>,
    budget: f64,
) -> Result<BatchForward> {
    let n = params.n_clients_trained;
    let m = params.n_items;
    let nm = n * m;
    let batch = inputs.nrows();
    if inputs.ncols() != (n + 1) * m {
        return Err(Error::dim(format!(
            "augmented input width {} but mechanism expects {}",
            inputs.ncols(),
            (n + 1) * m
        )));
    }
    if epsilons.dim() != (batch, nm) {
        return Err(Error::dim(format!(
            "epsilons shape {:?}, expected ({batch}, {nm})",
            epsilons.dim()
        )));
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::invalid("budget must be positive and finite"));
    }

    let (context, header_tape) = params.header.forward(inputs)?;
    let (alloc_logits, alloc_tape) = params.alloc_head.forward(&context)?;
    let (pay_fractions, pay_tape) = params.pay_head.forward(&context)?;

    // Column softmax per sample: for each row and item, normalize the N
    // client entries (stride m apart in the flat layout).
    let mut allocation = alloc_logits;
    for mut row in allocation.rows_mut() {
        for j in 0..m {
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                max = max.max(row[i * m + j]);
            }
            let mut sum = 0.0;
            for i in 0..n {
                let e = (row[i * m + j] - max).exp();
                row[i * m + j] = e;
                sum += e;
            }
            for i in 0..n {
                row[i * m + j] /= sum;
            }
        }
    }

    let bids = inputs.slice(ndarray::s![.., 0..nm]);
    let mut raw_payments = Array2::zeros((batch, n));
    let mut epsilon_out = Array2::zeros((batch, n));
    for r in 0..batch {
        for i in 0..n {
            let mut pay = 0.0;
            let mut eps = 0.0;
            for j in 0..m {
                let k = i * m + j;
                pay += pay_fractions[(r, k)] * bids[(r, k)];
                eps += allocation[(r, k)] * epsilons[(r, k)];
            }
            raw_payments[(r, i)] = pay;
            epsilon_out[(r, i)] = eps;
        }
    }

    let mut projected_payments = raw_payments.clone();
    for mut row in projected_payments.rows_mut() {
        let total: f64 = row.sum();
        if total > budget {
            let scale = budget / total;
            row.mapv_inplace(|p| p * scale);
        }
    }

    // Feasibility audit: budget satisfaction and per-item share sums.
    let mut column_sums = vec![0.0; m];
    for r in 0..batch {
        for j in 0..m {
            let mut s = 0.0;
            for i in 0..n {
                s += allocation[(r, i * m + j)];
            }
            column_sums[j] = s;
        }
        audit::record_outcome(projected_payments.row(r).sum(), budget, &column_sums);
    }

    Ok(BatchForward {
        header_tape,
        alloc_tape,
        pay_tape,
        allocation,
        pay_fractions,
        raw_payments,
        projected_payments,
        epsilon_out,
        epsilons: epsilons.clone(),
        budget,
    })
}

/// Backward pass through the batched mechanism.
///
/// `grad_payments` and `grad_epsilon_out` (`B × N` each) are the loss
/// gradients with respect to the **projected** payments and the granted
/// exposures. Set `want_params` false during misreport search to skip
/// materializing parameter gradients.
pub fn backward_batch(
    params: &MechanismParams,
    fwd: &BatchForward,
    grad_payments: &Array2<f64>,
    grad_epsilon_out: &Array2<f64>,
    want_params: bool,
) -> Result<MechanismGradients> {
    let n = params.n_clients_trained;
    let m = params.n_items;
    let nm = n * m;
    let batch = fwd.raw_payments.nrows();
    if grad_payments.dim() != (batch, n) || grad_epsilon_out.dim() != (batch, n) {
        return Err(Error::dim(format!(
            "cotangent shapes {:?}/{:?}, expected ({batch}, {n})",
            grad_payments.dim(),
            grad_epsilon_out.dim()
        )));
    }

    // Projection backward: p̄ = p·min(1, B/S) with S = Σp. In the binding
    // branch dp̄_i/dp_k = (B/S)δ_ik − p_i·B/S², giving the rank-one correction
    // below; in the slack branch the map is the identity.
    let mut grad_raw = grad_payments.clone();
    for r in 0..batch {
        let total: f64 = fwd.raw_payments.row(r).sum();
        if total > fwd.budget {
            let scale = fwd.budget / total;
            let weighted: f64 = grad_payments
                .row(r)
                .iter()
                .zip(fwd.raw_payments.row(r).iter())
                .map(|(&g, &p)| g * p)
                .sum();
            let correction = weighted * fwd.budget / (total * total);
            for i in 0..n {
                grad_raw[(r, i)] = scale * grad_payments[(r, i)] - correction;
            }
        }
    }

    // Raw payment p_i = Σ_j p̂_ij b_ij fans out to the payment fractions and
    // directly to the bids; exposure ε_out_i = Σ_j z_ij ε_ij fans out to the
    // allocation shares (declared budgets are data, not variables).
    let inputs = &fwd.header_tape.activations[0];
    let bid_part = inputs.slice(ndarray::s![.., 0..nm]);

    let mut grad_pay_fractions = Array2::zeros((batch, nm));
    let mut direct_bid_grad = Array2::zeros((batch, nm));
    let mut grad_allocation = Array2::zeros((batch, nm));
    for r in 0..batch {
        for i in 0..n {
            let gp = grad_raw[(r, i)];
            let ge = grad_epsilon_out[(r, i)];
            for j in 0..m {
                let k = i * m + j;
                grad_pay_fractions[(r, k)] = gp * bid_part[(r, k)];
                direct_bid_grad[(r, k)] = gp * fwd.pay_fractions[(r, k)];
                grad_allocation[(r, k)] = ge * fwd.epsilons[(r, k)];
            }
        }
    }

    // Column-softmax backward per sample and item.
    let mut grad_alloc_logits = Array2::zeros((batch, nm));
    for r in 0..batch {
        for j in 0..m {
            let mut dot = 0.0;
            for i in 0..n {
                let k = i * m + j;
                dot += fwd.allocation[(r, k)] * grad_allocation[(r, k)];
            }
            for i in 0..n {
                let k = i * m + j;
                grad_alloc_logits[(r, k)] = fwd.allocation[(r, k)] * (grad_allocation[(r, k)] - dot);
            }
        }
    }

    let alloc_grads = params
        .alloc_head
        .backward_select(&fwd.alloc_tape, &grad_alloc_logits, want_params)?;
    let pay_grads = params
        .pay_head
        .backward_select(&fwd.pay_tape, &grad_pay_fractions, want_params)?;

    let grad_context = &alloc_grads.input_grad + &pay_grads.input_grad;
    let mut header_grads = params
        .header
        .backward_select(&fwd.header_tape, &grad_context, want_params)?;

    // Fold the direct bid→payment path into the input gradient so callers get
    // the complete derivative with respect to every augmented entry.
    header_grads
        .input_grad
        .slice_mut(ndarray::s![.., 0..nm])
        .zip_mut_with(&direct_bid_grad, |a, &b| *a += b);

    Ok(MechanismGradients {
        header: header_grads,
        alloc_head: alloc_grads,
        pay_head: pay_grads,
    })
}

// ===== Single-profile conveniences =====

/// Evaluates the mechanism on one profile.
pub fn mechanism_forward(
    params: &MechanismParams,
    profile: &BidProfile,
    budget: f64,
) -> Result<ForwardResult> {
    let n = params.n_clients_trained;
    let m = params.n_items;
    if profile.n_clients != n || profile.n_items != m {
        return Err(Error::dim(format!(
            "profile is {}×{} but mechanism was built for {}×{}",
            profile.n_clients, profile.n_items, n, m
        )));
    }
    let input = build_augmented_input(profile)
        .into_shape_with_order((1, (n + 1) * m))
        .map_err(|e| Error::dim(e.to_string()))?;
    let eps_flat = profile
        .epsilons
        .clone()
        .into_shape_with_order((1, n * m))
        .map_err(|e| Error::dim(e.to_string()))?;
    let fwd = forward_batch(params, &input, &eps_flat, budget)?;

    let to_matrix = |flat: &Array2<f64>| -> Array2<f64> {
        Array2::from_shape_fn((n, m), |(i, j)| flat[(0, i * m + j)])
    };
    let context = to_matrix(&fwd.header_tape.activations[params.header.layers.len()]);
    Ok(ForwardResult {
        context,
        allocation: to_matrix(&fwd.allocation),
        pay_fractions: to_matrix(&fwd.pay_fractions),
        raw_payments: fwd.raw_payments.row(0).to_owned(),
        projected_payments: fwd.projected_payments.row(0).to_owned(),
        epsilon_out: fwd.epsilon_out.row(0).to_owned(),
    })
}

/// Packages a [`ForwardResult`] as a generic auction outcome. Every client
/// receives a positive share under the softmax allocation, so all indices are
/// winners.
pub fn forward_to_outcome(result: &ForwardResult) -> AuctionOutcome {
    AuctionOutcome {
        allocation: result.allocation.clone(),
        payments: result.projected_payments.clone(),
        epsilon_out: result.epsilon_out.clone(),
        winners: (0..result.allocation.nrows()).collect(),
    }
}

/// Utility of one client under the mechanism at a given true valuation:
/// payment received minus the privacy cost of the granted exposure.
pub fn client_utility_under_mechanism(result: &ForwardResult, client: usize, true_valuation: f64) -> f64 {
    result.projected_payments[client] - true_valuation * result.epsilon_out[client]
}

// ===== Persistence =====

/// Serializes the mechanism (all four networks) plus manifest entries.
///
/// The manifest always leads with the market geometry; callers append run
/// provenance such as scenario, budget, seed, and resolved configuration.
pub fn render_mechanism(params: &MechanismParams, extra_manifest: &[(String, String)]) -> String {
    let mut manifest = vec![
        ("n_clients".to_string(), params.n_clients_trained.to_string()),
        ("n_items".to_string(), params.n_items.to_string()),
    ];
    manifest.extend_from_slice(extra_manifest);
    render_checkpoint(
        &manifest,
        &[
            ("header", &params.header),
            ("alloc_head", &params.alloc_head),
            ("pay_head", &params.pay_head),
            ("critic", &params.critic),
        ],
    )
}

/// Writes [`render_mechanism`] output to a file.
pub fn save_mechanism(
    path: &std::path::Path,
    params: &MechanismParams,
    extra_manifest: &[(String, String)],
) -> Result<()> {
    std::fs::write(path, render_mechanism(params, extra_manifest))?;
    Ok(())
}

/// Parses a serialized mechanism, returning the parameters and the full
/// manifest (geometry entries included).
pub fn parse_mechanism(text: &str) -> Result<(MechanismParams, Vec<(String, String)>)> {
    let (manifest, sections) = parse_checkpoint(text)?;
    let lookup = |key: &str| -> Result<usize> {
        manifest
            .iter()
            .find(|(k, _)| k == key)
            .ok_or_else(|| Error::invalid(format!("checkpoint missing meta '{key}'")))?
            .1
            .parse::<usize>()
            .map_err(|e| Error::invalid(format!("meta '{key}': {e}")))
    };
    let n_clients = lookup("n_clients")?;
    let n_items = lookup("n_items")?;

    let take = |name: &str| -> Result<Mlp> {
        sections
            .iter()
            .find(|s: &&CheckpointSection| s.name == name)
            .map(|s| s.net.clone())
            .ok_or_else(|| Error::invalid(format!("checkpoint missing net '{name}'")))
    };
    let params = MechanismParams {
        header: take("header")?,
        alloc_head: take("alloc_head")?,
        pay_head: take("pay_head")?,
        critic: take("critic")?,
        n_clients_trained: n_clients,
        n_items,
    };
    let nm = n_clients * n_items;
    if params.header.input_dim() != (n_clients + 1) * n_items
        || params.header.output_dim() != nm
        || params.alloc_head.output_dim() != nm
        || params.pay_head.output_dim() != nm
    {
        return Err(Error::invalid(
            "checkpoint network shapes do not match the declared market geometry",
        ));
    }
    Ok((params, manifest))
}

/// Reads a serialized mechanism from a file.
pub fn load_mechanism(path: &std::path::Path) -> Result<(MechanismParams, Vec<(String, String)>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_mechanism(&text).map_err(|e| match e {
        Error::InvalidArgument(message) => Error::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}
