//! Trains the full objective on a small synthetic set and writes metrics and
//! checkpoints to a directory.
//!
//! cargo run --release --example train_full -- /tmp/cyclecon_run

use std::path::PathBuf;

use cyclecon::data::{generate, GenerateConfig};
use cyclecon::trainer::{epoch_means, fit, TrainConfig};

fn main() -> cyclecon::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("cyclecon_run"), PathBuf::from);
    let (ds, _) = generate(&GenerateConfig {
        num_videos: 400,
        ..GenerateConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 8,
        batch_size: 32,
        queue_capacity: 1024,
        m_nb: 256,
        ..TrainConfig::default()
    };
    let report = fit(&cfg, &ds, &out)?;
    for (epoch, mean) in epoch_means(&report.records).iter().enumerate() {
        println!("epoch {:>2}: mean loss {mean:.4}", epoch + 1);
    }
    let cycle_steps = report.records.iter().filter(|r| r.loss_cycle.is_some()).count();
    println!(
        "{} steps ({cycle_steps} with the cycle term) in {:.1}s",
        report.records.len(),
        report.elapsed_seconds
    );
    println!("checkpoint {}", report.final_checkpoint.display());
    println!("metrics {}", report.metrics_csv.display());
    Ok(())
}
