//! Trains a small learned mechanism for a few iterations and saves a
//! checkpoint. Uses a deliberately tiny configuration so it finishes in
//! seconds; raise `outer_iters` for a mechanism worth evaluating.
//!
//!     cargo run --release --example train_mechanism

use privmarket::market::Scenario;
use privmarket::mechanism::save_mechanism;
use privmarket::trainer::{train, TrainConfig};

fn main() -> privmarket::error::Result<()> {
    let config = TrainConfig {
        n_clients: 5,
        outer_iters: 30,
        inner_steps: 2,
        batch_size: 8,
        pga_steps: 10,
        budget: 2.0,
        seed: 7,
        ..TrainConfig::default()
    };
    config.validate()?;

    println!(
        "training a {}-client mechanism: {} outer iterations x {} inner steps, batch {}",
        config.n_clients, config.outer_iters, config.inner_steps, config.batch_size
    );

    let out = train(&config, Scenario::Uniform)?;

    println!("\n{:>5} {:>10} {:>12} {:>12} {:>10}", "iter", "revenue", "mean_regret", "loss_total", "rho");
    for row in out.log.iter().step_by(5) {
        println!(
            "{:>5} {:>10.4} {:>12.6} {:>12.4} {:>10.2}",
            row.iteration, row.revenue, row.mean_regret, row.loss_total, row.rho
        );
    }
    let last = out.log.last().expect("training logs every iteration");
    println!(
        "\nfinal iteration {}: revenue {:.4}, mean regret {:.6}",
        last.iteration, last.revenue, last.mean_regret
    );

    let path = std::env::temp_dir().join("privmarket_example_checkpoint.txt");
    save_mechanism(
        &path,
        &out.params,
        &[("example".into(), "train_mechanism".into())],
    )?;
    println!("checkpoint written to {}", path.display());
    println!("inspect it with: cargo run --release -- inspect-checkpoint {}", path.display());
    Ok(())
}
