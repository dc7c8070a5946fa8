//! Linear probe on frozen embeddings, per video and per frame.
//!
//! cargo run --release --example linear_probe

use cyclecon::data::{generate, GenerateConfig};
use cyclecon::encoder::Space;
use cyclecon::eval::{embed_dataset, linear_probe, ProbeConfig};
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
    let mut trainer = Trainer::new(&cfg, &train)?;
    trainer.run()?;
    let ck = trainer.checkpoint();
    let probe = ProbeConfig::default();
    let frames_train = embed_dataset(&ck, &train, &train_labels, Space::Backbone, 0)?;
    let frames_test = embed_dataset(&ck, &test, &test_labels, Space::Backbone, 1)?;
    println!("frame-level probe top-1 {:.4}", linear_probe(&frames_train, &frames_test, &probe)?);
    let videos_train = frames_train.video_level()?;
    let videos_test = frames_test.video_level()?;
    println!("video-level probe top-1 {:.4}", linear_probe(&videos_train, &videos_test, &probe)?);
    println!("chance {:.2}", 1.0 / train.num_classes() as f64);
    Ok(())
}
