//! Finite-difference check of every contrastive loss at 64-bit precision.
//!
//! cargo run --release --example gradcheck -- 50

use cyclecon::losses::LossConfig;
use cyclecon::verify::{gradient_suite, GRADCHECK_TOLERANCE};

fn main() -> cyclecon::Result<()> {
    let trials = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(20);
    for check in gradient_suite(0, trials, &LossConfig::default())? {
        println!(
            "{:<20} worst rel err {:.2e} (trial {}) {}",
            check.name,
            check.max_rel_error,
            check.worst_trial,
            if check.passed() { "ok" } else { "FAIL" }
        );
    }
    println!("tolerance {GRADCHECK_TOLERANCE:.0e}");
    Ok(())
}
