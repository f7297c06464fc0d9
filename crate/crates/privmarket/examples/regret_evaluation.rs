//! Measures best-response regret distributions: a threshold auction is
//! regret-free by construction, while an untrained network is exploitable.
//!
//!     cargo run --release --example regret_evaluation

use privmarket::auction::Mechanism;
use privmarket::eval::{evaluate_regret, regret_report_csv};
use privmarket::market::Scenario;
use privmarket::trainer::{initial_params, TrainConfig};

fn main() -> privmarket::error::Result<()> {
    let config = TrainConfig {
        n_clients: 6,
        budget: 2.0,
        pga_steps: 25,
        seed: 3,
        ..TrainConfig::default()
    };

    let samples = 32;
    println!("evaluating over {samples} sampled markets, {} clients each\n", config.n_clients);

    for (label, mechanism) in [
        ("threshold auction (grid misreport oracle)", Mechanism::Pac),
        (
            "untrained network (gradient misreport search)",
            Mechanism::Learned(initial_params(&config)?),
        ),
    ] {
        let report = evaluate_regret(&mechanism, Scenario::Uniform, samples, &config)?;
        println!("== {label}");
        println!(
            "   normalized regret: mean {:.6}, std {:.6}, quartiles [{:.6}, {:.6}, {:.6}]",
            report.mean,
            report.std,
            report.quartiles[0],
            report.quartiles[1],
            report.quartiles[2]
        );
        println!(
            "   individual-rationality violation rate: {:.4}, utility normalizer {:.4}\n",
            report.ir_violation_rate, report.normalizer
        );
        if matches!(mechanism, Mechanism::Learned(_)) {
            println!("full CSV for the learned row:\n{}", regret_report_csv(&report));
        }
    }
    Ok(())
}
