//! Classical budget-feasible procurement mechanisms.
//!
//! Two analytically characterized mechanisms for buying privacy budget from
//! `n` clients under a hard payment budget `B`:
//!
//! * [`pac_allocate`] — a threshold reverse auction. Valuations are sorted
//!   ascending and the mechanism selects the largest winner count
//!   `k ∈ {1, …, n−1}` such that the cost of the k-th cheapest client at the
//!   equal-share budget `ε = 1/(n−k)` stays within the per-winner budget
//!   `B/k`. Each winner sells `ε_out = 1/(n−k)` and is paid the *critical
//!   bid* `min(B/k, v_{k+1}/(n−k))` — the payment is pinned by the first
//!   excluded valuation, not the winner's own report, which is what makes
//!   truthful reporting a dominant strategy.
//! * [`vcg_procure`] — reverse (procurement) VCG with the same winner rule:
//!   each winner is paid the externality it imposes, i.e. the cost of the
//!   next-cheapest excluded client at the same ε share, capped at `B/k`.
//!   Under the linear cost model and uniform ε share this externality equals
//!   the threshold payment, so both mechanisms price identically; the test
//!   suite asserts the coincidence rather than assuming it.
//!
//! [`brute_force_regret`] is the deviation oracle used to *verify* incentive
//! properties: it grid-searches each client's misreports (valuation, and
//! declared ε for truthfulness in the privacy dimension) and reports the best
//! achievable utility gain.

use ndarray::{Array1, Array2};

use crate::audit;
use crate::error::{Error, Result};
use crate::market::{client_utility, privacy_cost, AuctionOutcome, ClientType};

/// Outcome of a classical mechanism: winner count, the uniform per-winner
/// privacy budget, and the generic outcome shared with learned mechanisms.
///
/// The allocation matrix stores an equal share `1/k` per winner so that the
/// single item column sums to exactly one; `epsilon_out` carries the actual
/// per-winner budget `1/(n−k)` directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalOutcome {
    /// Number of winning clients (0 when no feasible winner count exists).
    pub k_winners: usize,
    /// The equal-share privacy budget `1/(n−k)`; 0 when `k_winners = 0`.
    pub uniform_epsilon: f64,
    /// Allocation, payments, ε_out, winner set.
    pub outcome: AuctionOutcome,
}

/// Sorts client indices by ascending valuation, ties broken by original index.
fn sorted_indices(types: &[ClientType]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..types.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        types[a]
            .valuation
            .total_cmp(&types[b].valuation)
            .then(a.cmp(&b))
    });
    order
}

/// Selects the largest winner count `k ∈ {1, …, n−1}` with
/// `v_(k)/(n−k) ≤ B/k`, or 0 if none qualifies. `sorted` must be ascending.
///
/// Both mechanisms share this rule; the comparison uses the same divisions as
/// the payment rule so the feasibility chain `payment ≥ v_i·ε` holds exactly
/// in floating point, not just in real arithmetic.
fn select_k(types: &[ClientType], sorted: &[usize], budget: f64) -> usize {
    let n = types.len();
    for k in (1..n).rev() {
        let v_k = types[sorted[k - 1]].valuation;
        if v_k / (n - k) as f64 <= budget / k as f64 {
            return k;
        }
    }
    0
}

/// Validates shared preconditions of the classical mechanisms.
fn check_instance(types: &[ClientType], budget: f64) -> Result<()> {
    if types.len() < 2 {
        return Err(Error::invalid(
            "classical mechanisms require n >= 2 (the payment rule references the first excluded client)",
        ));
    }
    if !(budget.is_finite() && budget > 0.0) {
        return Err(Error::invalid("budget must be finite and > 0"));
    }
    Ok(())
}

/// Assembles a [`ClassicalOutcome`] given the selected `k` and a per-winner
/// payment, recording feasibility with the audit counters.
fn build_outcome(
    types: &[ClientType],
    sorted: &[usize],
    budget: f64,
    k: usize,
    payment: f64,
) -> ClassicalOutcome {
    let n = types.len();
    let mut allocation = Array2::zeros((n, 1));
    let mut payments = Array1::zeros(n);
    let mut epsilon_out = Array1::zeros(n);
    let uniform_epsilon = if k > 0 { 1.0 / (n - k) as f64 } else { 0.0 };
    let mut winners = Vec::with_capacity(k);
    for &i in sorted.iter().take(k) {
        allocation[(i, 0)] = 1.0 / k as f64;
        payments[i] = payment;
        epsilon_out[i] = uniform_epsilon;
        winners.push(i);
    }
    winners.sort_unstable();
    let column_sum = allocation.column(0).sum();
    audit::record_outcome(payments.sum(), budget, &[column_sum]);
    ClassicalOutcome {
        k_winners: k,
        uniform_epsilon,
        outcome: AuctionOutcome {
            allocation,
            payments,
            epsilon_out,
            winners,
        },
    }
}

/// Threshold reverse auction for privacy budget.
///
/// Sorts valuations ascending (stable; ties by original index), picks the
/// largest feasible winner count `k ≤ n−1`, assigns each winner
/// `ε_out = 1/(n−k)`, and pays every winner the critical bid
/// `min(B/k, v_{k+1}/(n−k))`. If no `k` qualifies the auction is empty and
/// everything is zero. Runs in `O(n log n)`.
pub fn pac_allocate(types: &[ClientType], budget: f64) -> Result<ClassicalOutcome> {
    check_instance(types, budget)?;
    let n = types.len();
    let sorted = sorted_indices(types);
    let k = select_k(types, &sorted, budget);
    if k == 0 {
        return Ok(build_outcome(types, &sorted, budget, 0, 0.0));
    }
    let v_next = types[sorted[k]].valuation;
    let payment = (budget / k as f64).min(v_next / (n - k) as f64);
    Ok(build_outcome(types, &sorted, budget, k, payment))
}

/// Reverse-procurement VCG with the same winner rule as [`pac_allocate`].
///
/// A winner's removal would admit the next-cheapest excluded client at cost
/// `c(v_{k+1}, 1/(n−k))`; that externality, capped at the per-winner budget
/// `B/k`, is the winner's payment. With linear costs and the uniform ε share
/// this coincides with the threshold payment of [`pac_allocate`].
pub fn vcg_procure(types: &[ClientType], budget: f64) -> Result<ClassicalOutcome> {
    check_instance(types, budget)?;
    let sorted = sorted_indices(types);
    let k = select_k(types, &sorted, budget);
    if k == 0 {
        return Ok(build_outcome(types, &sorted, budget, 0, 0.0));
    }
    let n = types.len();
    let uniform_epsilon = 1.0 / (n - k) as f64;
    let externality = privacy_cost(types[sorted[k]].valuation, uniform_epsilon);
    let payment = (budget / k as f64).min(externality);
    Ok(build_outcome(types, &sorted, budget, k, payment))
}

/// Exhaustive-deviation regret oracle.
///
/// For each client `i`, evaluates the mechanism on every misreport from a
/// uniform grid of `grid_size` valuations spanning `[0, 2·max true valuation]`
/// and (to check truthfulness in the privacy dimension) `grid_size` declared-ε
/// values spanning the instance's ε range, holding everyone else truthful.
/// Returns each client's maximum utility gain over truthful reporting, floored
/// at zero. Utilities are always computed at the client's *true* valuation.
///
/// This is the audit tool used to certify incentive claims about any
/// allocate-capable mechanism, and the ground truth the gradient-based
/// misreport search is compared against.
pub fn brute_force_regret<M>(
    mechanism: M,
    types: &[ClientType],
    budget: f64,
    grid_size: usize,
) -> Result<Vec<f64>>
where
    M: Fn(&[ClientType], f64) -> Result<AuctionOutcome>,
{
    if grid_size < 2 {
        return Err(Error::invalid("grid_size must be >= 2"));
    }
    let n = types.len();
    let truthful = mechanism(types, budget)?;
    let v_max = types
        .iter()
        .map(|t| t.valuation)
        .fold(0.0_f64, f64::max);
    let v_hi = 2.0 * v_max;
    let (eps_lo, eps_hi) = types.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), t| {
        (lo.min(t.epsilon_declared), hi.max(t.epsilon_declared))
    });

    let mut regrets = vec![0.0; n];
    let mut scratch = types.to_vec();
    for i in 0..n {
        let true_v = types[i].valuation;
        let u_truth = client_utility(truthful.payments[i], true_v, truthful.epsilon_out[i]);
        let mut best_gain = 0.0_f64;
        let consider = |scratch: &[ClientType]| -> Result<f64> {
            let out = mechanism(scratch, budget)?;
            let u = client_utility(out.payments[i], true_v, out.epsilon_out[i]);
            Ok(u - u_truth)
        };
        // Valuation misreports.
        for g in 0..grid_size {
            let v_mis = v_hi * g as f64 / (grid_size - 1) as f64;
            scratch[i].valuation = v_mis;
            best_gain = best_gain.max(consider(&scratch)?);
        }
        scratch[i].valuation = true_v;
        // Declared-ε misreports (dominant truthfulness in the privacy term).
        if eps_hi > eps_lo {
            let true_eps = types[i].epsilon_declared;
            for g in 0..grid_size {
                let eps_mis = eps_lo + (eps_hi - eps_lo) * g as f64 / (grid_size - 1) as f64;
                scratch[i].epsilon_declared = eps_mis;
                best_gain = best_gain.max(consider(&scratch)?);
            }
            scratch[i].epsilon_declared = true_eps;
        }
        regrets[i] = best_gain.max(0.0);
    }
    Ok(regrets)
}
