//! Frame retrieval with a trained encoder: test frames query the training
//! frames and a hit counts when one of the top k shares the query's class.
//!
//! cargo run --release --example retrieval

use cyclecon::data::{generate, GenerateConfig};
use cyclecon::encoder::Space;
use cyclecon::eval::{embed_dataset, first_hit_ranks, hit_rates};
use cyclecon::trainer::{TrainConfig, Trainer};

fn main() -> cyclecon::Result<()> {
    let (train, train_labels) = generate(&GenerateConfig {
        num_videos: 600,
        ..GenerateConfig::default()
    })?;
    let (test, test_labels) = generate(&GenerateConfig {
        num_videos: 150,
        seed: 1,
        ..GenerateConfig::default()
    })?;
    let cfg = TrainConfig {
        epochs: 10,
        queue_capacity: 2048,
        m_nb: 512,
        ..TrainConfig::default()
    };
    let ks = [1, 5, 10];
    let untrained = Trainer::new(&cfg, &train)?.checkpoint();
    let mut trainer = Trainer::new(&cfg, &train)?;
    trainer.run()?;
    for (name, ck) in [("untrained", untrained), ("trained", trainer.checkpoint())] {
        for space in [Space::Backbone, Space::VideoHead, Space::CycleHead] {
            let gallery = embed_dataset(&ck, &train, &train_labels, space, 0)?;
            let query = embed_dataset(&ck, &test, &test_labels, space, 1)?;
            let ranks = first_hit_ranks(&query, &gallery)?;
            let rates = hit_rates(&ranks, &ks);
            let shown: Vec<String> = ks.iter().zip(&rates).map(|(k, r)| format!("hit@{k} {r:.3}")).collect();
            println!("{name:<9} {space:?}: {}", shown.join("  "));
        }
    }
    Ok(())
}
