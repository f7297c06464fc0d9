//! Runs a short auction-gated federated-learning session: each round the
//! mechanism buys privacy exposure from clients, the winners send clipped,
//! noised model updates, and the server aggregates them.
//!
//!     cargo run --release --example federated_round

use privmarket::auction::Mechanism;
use privmarket::fl::{make_task, round_records_csv, run_fl, DpConfig, FlOptions};
use privmarket::market::Scenario;

fn main() -> privmarket::error::Result<()> {
    let n_clients = 10;
    let rounds = 8;
    let budget = 3.0;
    let dp = DpConfig::for_clients(n_clients);
    let task = make_task(n_clients, 0.5, 11)?;

    println!(
        "federated session: {n_clients} clients, {rounds} rounds, per-round budget {budget}"
    );
    println!(
        "noise calibration: delta {:.3}, sensitivity {}, clip {}\n",
        dp.delta, dp.sensitivity, dp.clip_norm
    );

    let options = FlOptions {
        scenario: Scenario::Uniform,
        ..FlOptions::default()
    };
    let outcome = run_fl(&Mechanism::Pac, &task, rounds, &dp, &options, budget, 99)?;

    println!("{}", round_records_csv(&outcome.records));
    println!(
        "final accuracy {:.4} (window-averaged), worst cumulative exposure {:.4}",
        outcome.final_accuracy,
        outcome
            .records
            .last()
            .map(|r| r.cum_eps_max)
            .unwrap_or(0.0)
    );
    Ok(())
}
