//! Process-wide feasibility audit counters.
//!
//! Budget feasibility (`Σ p̄ ≤ B`) and allocation-column stochasticity
//! (`Σ_i z_{ij} ≤ 1`) are hard invariants of every mechanism in this crate.
//! Rather than trusting spot checks, every outcome construction reports here,
//! and the verification suite asserts at the end of a run that *zero*
//! violations were observed across *all* evaluations performed in the process.
//!
//! Counters are atomics so concurrent evaluation never loses a report.

use std::sync::atomic::{AtomicU64, Ordering};

/// Slack used when classifying float round-off: violations are counted only
/// beyond this tolerance.
pub const BUDGET_SLACK: f64 = 1e-9;
/// Tolerance on allocation column sums.
pub const COLUMN_SLACK: f64 = 1e-9;

static EVALUATIONS: AtomicU64 = AtomicU64::new(0);
static BUDGET_VIOLATIONS: AtomicU64 = AtomicU64::new(0);
static COLUMN_VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// Records one mechanism evaluation.
///
/// `payment_sum` is the post-projection revenue, `budget` the hard cap, and
/// `column_sums` the per-item allocation column totals.
pub fn record_outcome(payment_sum: f64, budget: f64, column_sums: &[f64]) {
    EVALUATIONS.fetch_add(1, Ordering::Relaxed);
    if !(payment_sum <= budget + BUDGET_SLACK) {
        BUDGET_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
    for &s in column_sums {
        if !(s <= 1.0 + COLUMN_SLACK) {
            COLUMN_VIOLATIONS.fetch_add(1, Ordering::Relaxed);
            break;
        }
    }
}

/// Snapshot of the audit counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditSnapshot {
    /// Total outcomes recorded since process start (or last reset).
    pub evaluations: u64,
    /// Outcomes whose payments exceeded the budget beyond tolerance.
    pub budget_violations: u64,
    /// Outcomes with an allocation column summing above one beyond tolerance.
    pub column_violations: u64,
}

/// Reads the current counters.
pub fn snapshot() -> AuditSnapshot {
    AuditSnapshot {
        evaluations: EVALUATIONS.load(Ordering::Relaxed),
        budget_violations: BUDGET_VIOLATIONS.load(Ordering::Relaxed),
        column_violations: COLUMN_VIOLATIONS.load(Ordering::Relaxed),
    }
}

/// Resets all counters to zero (used by tests that need a clean window).
pub fn reset() {
    EVALUATIONS.store(0, Ordering::Relaxed);
    BUDGET_VIOLATIONS.store(0, Ordering::Relaxed);
    COLUMN_VIOLATIONS.store(0, Ordering::Relaxed);
}
