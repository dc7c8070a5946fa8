//! Renders a synthetic video set, writes it as a CCV1 file and reads it back.
//!
//! cargo run --release --example generate_dataset -- /tmp/train.ccv

use std::path::PathBuf;

use cyclecon::data::{generate, read_dataset, write_dataset, GenerateConfig};

fn main() -> cyclecon::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("cyclecon_demo.ccv"), PathBuf::from);
    let cfg = GenerateConfig {
        num_videos: 200,
        ..GenerateConfig::default()
    };
    let (ds, labels) = generate(&cfg)?;
    write_dataset(&out, &ds, &labels)?;
    let (back, back_labels) = read_dataset(&out)?;
    assert_eq!(back_labels.of(7), labels.of(7));

    println!(
        "{}: {} videos x {} frames of {}x{}, {} classes",
        out.display(),
        back.num_videos(),
        back.frames_per_video(),
        back.height(),
        back.width(),
        back.num_classes()
    );
    // A coarse look at the first video: mean intensity per frame.
    for f in 0..back.frames_per_video() {
        let px = back.frame(0, f);
        println!("video 0 frame {f}: mean {:.3}", px.iter().sum::<f32>() / px.len() as f32);
    }
    let mut counts = vec![0usize; back.num_classes()];
    for v in 0..back.num_videos() {
        counts[back_labels.of(v)] += 1;
    }
    println!("videos per class: {counts:?}");
    Ok(())
}
