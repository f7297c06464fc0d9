//! Economic primitives of the privacy-budget market.
//!
//! Clients hold a differential-privacy budget `ε` and a private valuation `v`
//! expressing how much compensation they require per unit of `ε` consumed.
//! A buyer (the federated-learning server) procures privacy budget under a
//! hard payment budget `B`. Every mechanism in this crate — the classical
//! threshold auctions and the learned one — consumes and produces the types
//! defined here:
//!
//! * [`ClientType`] — one client's declared type `(v, ε, d, u, δ)`.
//! * [`BidProfile`] — a bid matrix together with its mean-field (population
//!   average) bid row, the summary statistic the learned mechanism conditions
//!   on.
//! * [`AuctionOutcome`] — allocation, payments, and per-client effective
//!   privacy budget `ε_out`.
//! * [`WelfareReport`] — revenue, budget feasibility, and social welfare
//!   evaluated at *true* valuations.
//!
//! The cost model is linear: giving up `ε_out` units of privacy budget costs a
//! client `v · ε_out` currency units, so social welfare aligns with realized
//! privacy cost.

use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, LogNormal};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

// ===== Domain types =====

/// One client's declared type.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientType {
    /// Required compensation per unit of privacy budget spent (currency/ε).
    pub valuation: f64,
    /// Declared differential-privacy budget (ε units), strictly positive.
    pub epsilon_declared: f64,
    /// Local model size in abstract units (metadata for valuation models).
    pub model_size: f64,
    /// Local model accuracy in `[0, 1]` (metadata for valuation models).
    pub local_accuracy: f64,
    /// Per-client DP failure probability δ in `[0, 1)`.
    pub delta: f64,
}

impl ClientType {
    /// Validates the type's invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.valuation.is_finite() && self.valuation >= 0.0) {
            return Err(Error::invalid("valuation must be finite and >= 0"));
        }
        if !(self.epsilon_declared.is_finite() && self.epsilon_declared > 0.0) {
            return Err(Error::invalid("epsilon_declared must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.local_accuracy) {
            return Err(Error::invalid("local_accuracy must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(Error::invalid("delta must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A full bid profile: `N` clients, `m` items per client.
///
/// For the privacy market `m = 1` and the single bid coordinate is the
/// valuation `v_i` (the monetary quantity payments scale with); the declared
/// `ε_i` travels alongside in [`BidProfile::epsilons`] and is consumed when
/// computing each client's effective budget `ε_out`. The mean-field bid is the
/// column-wise arithmetic mean of the bid matrix and summarizes the
/// competitive environment for the learned mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct BidProfile {
    /// Bid matrix, `N×m`, nonnegative entries.
    pub bids: Array2<f64>,
    /// Declared per-item privacy budgets, `N×m` (metadata; not part of the
    /// strategic bid space searched by misreport routines).
    pub epsilons: Array2<f64>,
    /// Column means of `bids`, length `m`.
    pub mean_field_bid: Array1<f64>,
    /// Number of clients `N`.
    pub n_clients: usize,
    /// Number of items `m`.
    pub n_items: usize,
}

impl BidProfile {
    /// Builds a profile from a bid matrix and matching ε matrix, computing the
    /// mean-field row.
    pub fn new(bids: Array2<f64>, epsilons: Array2<f64>) -> Result<Self> {
        if bids.dim() != epsilons.dim() {
            return Err(Error::dim(format!(
                "bids {:?} vs epsilons {:?}",
                bids.dim(),
                epsilons.dim()
            )));
        }
        let (n, m) = bids.dim();
        if n == 0 || m == 0 {
            return Err(Error::invalid("profile must have N >= 1 and m >= 1"));
        }
        for &b in bids.iter() {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::invalid("bids must be finite and >= 0"));
            }
        }
        let mean_field_bid = bids.mean_axis(ndarray::Axis(0)).expect("n >= 1");
        Ok(BidProfile {
            bids,
            epsilons,
            mean_field_bid,
            n_clients: n,
            n_items: m,
        })
    }

    /// Builds the canonical single-item profile from client types: bid
    /// coordinate `b_{i1} = v_i`, ε metadata `ε_{i1} = ε_i`.
    pub fn from_types(types: &[ClientType]) -> Result<Self> {
        let n = types.len();
        if n == 0 {
            return Err(Error::invalid("need at least one client"));
        }
        let bids = Array2::from_shape_fn((n, 1), |(i, _)| types[i].valuation);
        let epsilons = Array2::from_shape_fn((n, 1), |(i, _)| types[i].epsilon_declared);
        BidProfile::new(bids, epsilons)
    }

    /// Returns a copy with client `i`'s bid row replaced and the mean-field
    /// row updated self-consistently.
    pub fn with_misreport(&self, i: usize, new_bid: &Array1<f64>) -> Result<Self> {
        if i >= self.n_clients {
            return Err(Error::invalid(format!("client index {i} out of range")));
        }
        if new_bid.len() != self.n_items {
            return Err(Error::dim("misreport width must equal n_items"));
        }
        let mut bids = self.bids.clone();
        bids.row_mut(i).assign(new_bid);
        BidProfile::new(bids, self.epsilons.clone())
    }
}

/// The outcome of running any mechanism on a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    /// Allocation matrix `N×m` with entries in `[0, 1]`; every column sums to
    /// at most one (the per-item allocation is a share of a single unit).
    pub allocation: Array2<f64>,
    /// Post-projection payments, length `N`, nonnegative.
    pub payments: Array1<f64>,
    /// Effective privacy budget granted to each client, length `N`.
    pub epsilon_out: Array1<f64>,
    /// Indices of clients with positive allocation.
    pub winners: Vec<usize>,
}

impl AuctionOutcome {
    /// Derives the winner set from the allocation matrix.
    pub fn winners_from_allocation(allocation: &Array2<f64>) -> Vec<usize> {
        allocation
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, row)| row.sum() > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Revenue, budget feasibility, and welfare of an outcome at true valuations.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareReport {
    /// Total payments `Σ p̄_i`.
    pub revenue: f64,
    /// Budget feasibility ratio `revenue / B`.
    pub budget_ratio: f64,
    /// `Σ_i (p̄_i − v_i · ε_out_i)` with *true* valuations.
    pub social_welfare: f64,
    /// Per-client utility `p̄_i − v_i · ε_out_i`.
    pub per_client_utility: Vec<f64>,
}

// ===== Operations =====

/// Linear privacy cost: spending `eps_out` units of budget at valuation `v`
/// costs `v · eps_out`.
pub fn privacy_cost(v: f64, eps_out: f64) -> f64 {
    debug_assert!(v >= 0.0 && eps_out >= 0.0, "cost arguments must be >= 0");
    v * eps_out
}

/// Client utility: payment received minus privacy cost incurred.
pub fn client_utility(payment: f64, v: f64, eps_out: f64) -> f64 {
    payment - privacy_cost(v, eps_out)
}

/// Evaluates revenue, budget ratio, and social welfare of an outcome using the
/// clients' *true* valuations (misreports affect payments and allocations, but
/// welfare is always measured at truth).
pub fn social_welfare(
    outcome: &AuctionOutcome,
    true_valuations: &[f64],
    budget: f64,
) -> Result<WelfareReport> {
    let n = outcome.payments.len();
    if true_valuations.len() != n || outcome.epsilon_out.len() != n {
        return Err(Error::dim(format!(
            "welfare inputs disagree on N: payments {}, valuations {}, eps_out {}",
            n,
            true_valuations.len(),
            outcome.epsilon_out.len()
        )));
    }
    if budget <= 0.0 {
        return Err(Error::invalid("budget must be > 0"));
    }
    let revenue: f64 = outcome.payments.sum();
    let per_client_utility: Vec<f64> = (0..n)
        .map(|i| client_utility(outcome.payments[i], true_valuations[i], outcome.epsilon_out[i]))
        .collect();
    let social_welfare = per_client_utility.iter().sum();
    Ok(WelfareReport {
        revenue,
        budget_ratio: revenue / budget,
        social_welfare,
        per_client_utility,
    })
}

/// Composite valuation model: `v = α_v · u/ε + β_v · d + γ_v · q` where `u` is
/// local accuracy, `ε` the declared budget, `d` the data/model size, and `q` a
/// non-IID divergence score. The experiments in this crate use weights
/// `(1, 0, 0)`, i.e. `v ∝ u/ε`.
pub fn valuation_from_profile(
    u: f64,
    eps: f64,
    data_size: f64,
    noniid: f64,
    weights: (f64, f64, f64),
) -> Result<f64> {
    if eps <= 0.0 {
        return Err(Error::invalid("valuation model requires eps > 0"));
    }
    let (a, b, c) = weights;
    if a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::invalid("valuation weights must be >= 0"));
    }
    Ok(a * u / eps + b * data_size + c * noniid)
}

/// The client-population scenarios used across all experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// `v ~ U[0,1]`, `ε ~ U[0.1, 5]`.
    Uniform,
    /// `v ~ U[0,1]`; half the population is privacy-sensitive with
    /// `ε ~ U[0.1, 0.5]`, the rest privacy-tolerant with `ε ~ U[2, 5]`.
    Bimodal,
    /// `v ~ LogNormal(μ=0, σ=0.5)` (median 1), `ε ~ U[0.1, 5]`.
    Realistic,
}

impl Scenario {
    /// Canonical config-file spelling.
    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Uniform => "uniform",
            Scenario::Bimodal => "bimodal",
            Scenario::Realistic => "realistic",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Scenario::Uniform),
            "bimodal" => Ok(Scenario::Bimodal),
            "realistic" => Ok(Scenario::Realistic),
            other => Err(Error::invalid(format!(
                "unknown scenario '{other}' (expected uniform | bimodal | realistic)"
            ))),
        }
    }
}

/// Samples `n` client types for a scenario. Deterministic for a fixed seed:
/// the same `(scenario, n, seed)` always yields bit-identical lists.
///
/// Bimodal assigns the first `⌈n/2⌉` clients to the privacy-sensitive group
/// (for odd `n` the split is broken toward the sensitive side). Every client
/// gets `δ = 1/n`, model size 1, and an independent local accuracy in `[0,1]`.
pub fn sample_types(scenario: Scenario, n: usize, seed: u64) -> Vec<ClientType> {
    assert!(n >= 1, "sample_types requires n >= 1");
    let mut rng = StdRng::seed_from_u64(seed);
    let lognormal = LogNormal::new(0.0, 0.5).expect("valid lognormal parameters");
    let sensitive_count = n.div_ceil(2);
    (0..n)
        .map(|i| {
            let valuation = match scenario {
                Scenario::Uniform | Scenario::Bimodal => rng.gen::<f64>(),
                Scenario::Realistic => lognormal.sample(&mut rng),
            };
            let epsilon_declared = match scenario {
                Scenario::Uniform | Scenario::Realistic => rng.gen_range(0.1..5.0),
                Scenario::Bimodal => {
                    if i < sensitive_count {
                        rng.gen_range(0.1..0.5)
                    } else {
                        rng.gen_range(2.0..5.0)
                    }
                }
            };
            let local_accuracy = rng.gen::<f64>();
            ClientType {
                valuation,
                epsilon_declared,
                model_size: 1.0,
                local_accuracy,
                delta: 1.0 / n as f64,
            }
        })
        .collect()
}
