//! Times mechanism execution across market sizes and fits log-log slopes,
//! contrasting the sort-based auction with a single network forward pass.
//!
//!     cargo run --release --example scaling_curves

use privmarket::auction::MechanismKind;
use privmarket::eval::{scaling_benchmark, scaling_csv};

fn main() -> privmarket::error::Result<()> {
    let sizes = [10, 20, 40, 80, 160, 320];
    let reps = 5;
    println!(
        "timing {} market sizes, median of {reps} repetitions each\n",
        sizes.len()
    );

    let reports = scaling_benchmark(
        &[MechanismKind::Pac, MechanismKind::Learned],
        &sizes,
        reps,
        5.0,
        17,
    )?;

    println!("{}", scaling_csv(&reports));
    for report in &reports {
        println!(
            "{:>8}: fitted runtime exponent {:.3}",
            report.mechanism, report.slope
        );
    }
    println!("\nexponent ~1 means linear cost in the number of clients;");
    println!("the network forward pass stays flat until matrix work dominates.");
    Ok(())
}
