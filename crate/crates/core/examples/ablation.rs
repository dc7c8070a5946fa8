//! Trains the three loss presets on the same synthetic set for several seeds
//! and compares frame-retrieval top-1 on a held-out set.
//!
//! cargo run --release --example ablation -- --seeds 5 --epochs 20

use std::time::Instant;

use clap::Parser;
use cyclecon::data::{generate, GenerateConfig};
use cyclecon::encoder::Space;
use cyclecon::eval::{embed_dataset, knn_retrieval};
use cyclecon::trainer::{LossPreset, TrainConfig, Trainer};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 2000)]
    videos: usize,
    #[arg(long, default_value_t = 500)]
    test_videos: usize,
}

fn main() -> cyclecon::Result<()> {
    let args = Args::parse();
    let (train, train_labels) = generate(&GenerateConfig {
        num_videos: args.videos,
        ..GenerateConfig::default()
    })?;
    let (test, test_labels) = generate(&GenerateConfig {
        num_videos: args.test_videos,
        seed: 1,
        ..GenerateConfig::default()
    })?;
    println!("seed  intra-image  intra-video  full");
    for seed in 0..args.seeds {
        let mut row = Vec::new();
        for preset in [LossPreset::IntraImage, LossPreset::IntraVideo, LossPreset::Full] {
            let cfg = TrainConfig {
                epochs: args.epochs,
                preset,
                seed,
                ..TrainConfig::default()
            };
            let t0 = Instant::now();
            let mut trainer = Trainer::new(&cfg, &train)?;
            let records = trainer.run()?;
            let ck = trainer.checkpoint();
            let gallery = embed_dataset(&ck, &train, &train_labels, Space::Backbone, 0)?;
            let query = embed_dataset(&ck, &test, &test_labels, Space::Backbone, 1)?;
            let top1 = knn_retrieval(&query, &gallery, &[1])?[0];
            eprintln!(
                "seed {seed} {preset}: top1 {top1:.4}, final loss {:.4}, {:.1}s",
                records.last().map_or(f64::NAN, |r| r.loss_total),
                t0.elapsed().as_secs_f64()
            );
            row.push(top1);
        }
        println!("{seed:>4}  {:>11.4}  {:>11.4}  {:>4.4}", row[0], row[1], row[2]);
    }
    Ok(())
}
