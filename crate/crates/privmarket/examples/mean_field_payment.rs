//! Demonstrates the mean-field view of the market: a representative client
//! facing opponents resampled from an empirical pool, and the coupling that
//! makes a misreport shift the population summary every client sees.
//!
//!     cargo run --release --example mean_field_payment

use ndarray::arr1;
use privmarket::market::{sample_types, BidProfile, Scenario};
use privmarket::mechanism::{mechanism_forward, MechanismParams};
use privmarket::trainer::{mean_field_payment, misreport_mean_field};
use rand::rngs::StdRng;
use rand::SeedableRng;

fn main() -> privmarket::error::Result<()> {
    let n = 6;
    let budget = 2.0;
    let params = MechanismParams::new(n, 1, 21)?;
    let types = sample_types(Scenario::Uniform, n, 5);
    let pool = BidProfile::from_types(&types)?;

    // Expected payment of a representative client bidding b against opponents
    // drawn from the pool, Monte Carlo over resampled line-ups.
    let mut rng = StdRng::seed_from_u64(1);
    println!("representative-client expected payment vs own bid:");
    for bid in [0.1, 0.3, 0.5, 0.8, 1.2] {
        let paid = mean_field_payment(&params, &arr1(&[bid]), &pool, 64, budget, &mut rng)?;
        println!("  bid {bid:>4.2} -> expected payment {paid:.6}");
    }

    // Degenerate pool: every opponent is identical, so resampling is a no-op
    // and the expectation equals one direct forward pass.
    let uniform_types = sample_types(Scenario::Uniform, 1, 5);
    let one = uniform_types[0].clone();
    let clones: Vec<_> = (0..n).map(|_| one.clone()).collect();
    let degenerate = BidProfile::from_types(&clones)?;
    let mut rng2 = StdRng::seed_from_u64(2);
    let expected = mean_field_payment(
        &params,
        &arr1(&[one.valuation]),
        &degenerate,
        16,
        budget,
        &mut rng2,
    )?;
    let direct = mechanism_forward(&params, &degenerate, budget)?;
    println!(
        "\nidentical-pool check: expectation {expected:.9} vs direct forward {:.9} (difference {:.1e})",
        direct.projected_payments[0],
        (expected - direct.projected_payments[0]).abs()
    );

    // The population summary is part of the mechanism input, so a deviation
    // by one client perturbs it for everyone by (new - old) / n.
    let profile = BidProfile::from_types(&types)?;
    let old_bid = profile.bids[(2, 0)];
    let new_bid = old_bid + 0.5;
    let shifted = misreport_mean_field(&profile.mean_field_bid, &arr1(&[old_bid]), &arr1(&[new_bid]), n)?;
    println!(
        "\nmean-field coupling: population summary {:.6} -> {:.6} when client 2 moves {:.3} -> {:.3}",
        profile.mean_field_bid[0], shifted[0], old_bid, new_bid
    );
    println!("shift equals (new - old)/n = {:.6}", (new_bid - old_bid) / n as f64);
    Ok(())
}
