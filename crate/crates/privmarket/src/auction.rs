//! Uniform dispatch over every auction mechanism the simulator can run.

use ndarray::{Array1, Array2};

use crate::audit;
use crate::classical::{pac_allocate, vcg_procure};
use crate::error::Result;
use crate::market::{AuctionOutcome, BidProfile, ClientType};
use crate::mechanism::{forward_to_outcome, mechanism_forward, MechanismParams};

/// A runnable mechanism: classical procurement rules, a degenerate fixed-rate
/// baseline, or a trained network.
#[derive(Debug, Clone)]
pub enum Mechanism {
    /// Budget-feasible posted-rate procurement (threshold payments).
    Pac,
    /// Externality-payment twin of the procurement rule.
    Vcg,
    /// Grants every client the same exposure at zero payment; used for
    /// privacy-level ablations and no-auction baselines.
    FixedEpsilon(f64),
    /// A learned mechanism.
    Learned(MechanismParams),
}

impl Mechanism {
    /// Stable identifier used in artifact file names and table rows.
    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Pac => "pac",
            Mechanism::Vcg => "vcg",
            Mechanism::FixedEpsilon(_) => "fixed_epsilon",
            Mechanism::Learned(_) => "learned",
        }
    }

    /// Trained parameters, when this is a learned mechanism.
    pub fn learned_params(&self) -> Option<&MechanismParams> {
        match self {
            Mechanism::Learned(p) => Some(p),
            _ => None,
        }
    }

    /// Runs the mechanism on declared client types under a payment budget.
    pub fn run(&self, types: &[ClientType], budget: f64) -> Result<AuctionOutcome> {
        match self {
            Mechanism::Pac => Ok(pac_allocate(types, budget)?.outcome),
            Mechanism::Vcg => Ok(vcg_procure(types, budget)?.outcome),
            Mechanism::FixedEpsilon(eps) => {
                let n = types.len();
                let allocation = Array2::from_elem((n, 1), 1.0 / n as f64);
                let outcome = AuctionOutcome {
                    allocation,
                    payments: Array1::zeros(n),
                    epsilon_out: Array1::from_elem(n, *eps),
                    winners: (0..n).collect(),
                };
                audit::record_outcome(0.0, budget, &[1.0]);
                Ok(outcome)
            }
            Mechanism::Learned(params) => {
                let profile = BidProfile::from_types(types)?;
                let fwd = mechanism_forward(params, &profile, budget)?;
                Ok(forward_to_outcome(&fwd))
            }
        }
    }
}

/// Lightweight mechanism identifier for interfaces that construct mechanisms
/// on demand (scaling benchmarks, CLI flag parsing).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismKind {
    /// Posted-rate procurement.
    Pac,
    /// Externality-payment procurement.
    Vcg,
    /// Learned mechanism (instantiated untrained unless a checkpoint is
    /// supplied elsewhere).
    Learned,
}

impl MechanismKind {
    /// Stable identifier matching [`Mechanism::name`].
    pub fn name(&self) -> &'static str {
        match self {
            MechanismKind::Pac => "pac",
            MechanismKind::Vcg => "vcg",
            MechanismKind::Learned => "learned",
        }
    }

    /// Builds a runnable mechanism for an `n`-client, `m`-item market.
    /// Learned mechanisms come back with fresh (untrained) parameters.
    pub fn instantiate(&self, n: usize, m: usize, seed: u64) -> Result<Mechanism> {
        Ok(match self {
            MechanismKind::Pac => Mechanism::Pac,
            MechanismKind::Vcg => Mechanism::Vcg,
            MechanismKind::Learned => Mechanism::Learned(MechanismParams::new(n, m, seed)?),
        })
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pac" => Ok(MechanismKind::Pac),
            "vcg" => Ok(MechanismKind::Vcg),
            "learned" | "mfgregretnet" => Ok(MechanismKind::Learned),
            other => Err(crate::error::Error::invalid(format!(
                "unknown mechanism '{other}' (expected pac | vcg | learned)"
            ))),
        }
    }
}
