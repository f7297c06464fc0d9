//! Privacy-budget auctions and a differentially private federated-learning
//! market simulator.
//!
//! A federated-learning server with a fixed payment budget procures
//! differential-privacy budget (ε) from strategic clients. Each client has a
//! private per-unit valuation for their privacy; the server wants accurate
//! model updates, which need large ε and therefore little noise. This crate
//! implements both sides of that market and the learning loop on top of it:
//!
//! * [`classical`] — budget-feasible posted-rate procurement and its
//!   externality-payment (VCG-style) twin, with exact incentive guarantees
//!   and a brute-force misreport audit.
//! * [`mechanism`] — a learned auction: neural allocation and payment rules
//!   over the full bid profile plus its population mean, budget-feasible by
//!   construction.
//! * [`trainer`] — adversarial training of the learned auction: revenue
//!   maximization under augmented-Lagrangian regret constraints, a
//!   population-consistency payment target, and an optional learned value
//!   baseline for the misreport search.
//! * [`fl`] — the downstream differentially private federated averaging loop
//!   whose accuracy the procured ε actually buys.
//! * [`eval`] — regret measurement, efficiency tables, scaling benchmarks,
//!   and the statistics used by the experiment drivers.
//! * [`cli`] — the `privmarket` binary: `train`, `rq1`–`rq4` experiment
//!   drivers, `verify`, and `inspect-checkpoint`.
//!
//! Start with the `examples/` directory: each example is a runnable walk
//! through one capability (classical auctions, training, regret evaluation,
//! federated rounds, scaling, population-consistent payments).
//!
//! Determinism: every stochastic component takes an explicit seed and uses a
//! counter-based generator, so identical invocations produce identical
//! artifacts byte for byte.

pub mod acceptance;
pub mod audit;
pub mod auction;
pub mod classical;
pub mod cli;
pub mod diffnet;
pub mod error;
pub mod eval;
pub mod fl;
pub mod market;
pub mod mechanism;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
