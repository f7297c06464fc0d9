//! Runs the two closed-form procurement auctions on a sampled market and
//! shows that the critical-payment rule makes their charges coincide.
//!
//!     cargo run --release --example classical_auction

use privmarket::classical::{brute_force_regret, pac_allocate, vcg_procure};
use privmarket::market::{sample_types, social_welfare, Scenario};

fn main() -> privmarket::error::Result<()> {
    let n = 8;
    let budget = 1.5;
    let types = sample_types(Scenario::Uniform, n, 42);

    println!("market: {n} clients, budget {budget}, uniform scenario");
    println!("{:>6} {:>12} {:>12}", "client", "valuation", "eps_declared");
    for (i, t) in types.iter().enumerate() {
        println!("{i:>6} {:>12.4} {:>12.4}", t.valuation, t.epsilon_declared);
    }

    let pac = pac_allocate(&types, budget)?;
    let vcg = vcg_procure(&types, budget)?;

    println!("\nwinners bought: {}", pac.k_winners);
    println!("uniform exposure eps_out = {:.4}", pac.uniform_epsilon);
    println!("{:>6} {:>12} {:>12} {:>10}", "client", "pac_payment", "vcg_payment", "eps_out");
    for i in 0..n {
        println!(
            "{i:>6} {:>12.6} {:>12.6} {:>10.4}",
            pac.outcome.payments[i], vcg.outcome.payments[i], pac.outcome.epsilon_out[i]
        );
    }
    let max_gap = (0..n)
        .map(|i| (pac.outcome.payments[i] - vcg.outcome.payments[i]).abs())
        .fold(0.0_f64, f64::max);
    println!("largest payment difference between the two rules: {max_gap:.2e}");

    let valuations: Vec<f64> = types.iter().map(|t| t.valuation).collect();
    let report = social_welfare(&pac.outcome, &valuations, budget)?;
    println!(
        "\nrevenue {:.4} (budget fraction {:.3}), social welfare {:.4}",
        report.revenue, report.budget_ratio, report.social_welfare
    );

    // Exhaustive misreport search over a value/exposure grid: the threshold
    // rule leaves no profitable deviation.
    let regret = brute_force_regret(
        |reported, b| Ok(pac_allocate(reported, b)?.outcome),
        &types,
        budget,
        64,
    )?;
    let worst = regret.iter().cloned().fold(0.0_f64, f64::max);
    println!("worst grid-search misreport gain across clients: {worst:.2e}");
    Ok(())
}
