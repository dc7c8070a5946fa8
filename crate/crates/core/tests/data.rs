use cyclecon::data::{
    augment, generate, read_dataset, sample_pair_batch, write_dataset, AugmentConfig, GenerateConfig,
};
use cyclecon::Error;

fn mean_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64
}

#[test]
fn classes_are_separable_by_pixel_centroids() {
    let (train, tl) = generate(&GenerateConfig::default()).unwrap();
    let (test, sl) = generate(&GenerateConfig {
        num_videos: 500,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let (d, c, f) = (train.frame_len(), train.num_classes(), train.frames_per_video());
    let mut centroids = vec![vec![0.0f64; d]; c];
    let mut counts = vec![0usize; c];
    for v in 0..train.num_videos() {
        for fr in 0..f {
            counts[tl.of(v)] += 1;
            for (a, &x) in centroids[tl.of(v)].iter_mut().zip(train.frame(v, fr)) {
                *a += x as f64;
            }
        }
    }
    for (cent, &n) in centroids.iter_mut().zip(&counts) {
        cent.iter_mut().for_each(|a| *a /= n as f64);
    }
    let mut hits = 0;
    for v in 0..test.num_videos() {
        for fr in 0..f {
            let x = test.frame(v, fr);
            let dist = |cent: &Vec<f64>| -> f64 { cent.iter().zip(x).map(|(a, &b)| (a - b as f64).powi(2)).sum() };
            let best = (0..c).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
            hits += (best == sl.of(v)) as usize;
        }
    }
    let acc = hits as f64 / (test.num_videos() * f) as f64;
    assert!(acc >= 0.60, "nearest-centroid accuracy {acc}");
}

#[test]
fn consecutive_frames_are_closer_than_other_videos() {
    let (ds, _) = generate(&GenerateConfig {
        num_videos: 400,
        ..Default::default()
    })
    .unwrap();
    let (mut within, mut across) = (0.0, 0.0);
    let n = ds.num_videos();
    for v in 0..n {
        for f in 1..ds.frames_per_video() {
            let d = mean_abs_diff(ds.frame(v, f - 1), ds.frame(v, f));
            assert!(d > 0.0);
            within += d;
        }
        across += mean_abs_diff(ds.frame(v, 0), ds.frame((v + 1) % n, 0));
    }
    within /= (n * (ds.frames_per_video() - 1)) as f64;
    across /= n as f64;
    assert!(within < across, "within {within} vs across {across}");
}

#[test]
fn frame_indices_are_drawn_uniformly() {
    let (ds, _) = generate(&GenerateConfig {
        num_videos: 40,
        height: 4,
        width: 4,
        ..Default::default()
    })
    .unwrap();
    let aug = AugmentConfig::identity();
    let mut counts = [0usize; 4];
    let batches = 1000;
    for s in 0..batches {
        let b = sample_pair_batch(&ds, 8, &aug, s).unwrap();
        let mut vids = b.video_ids.clone();
        vids.sort_unstable();
        vids.dedup();
        assert_eq!(vids.len(), 8);
        for (&i, &j) in b.frame_i.iter().zip(&b.frame_j) {
            assert_ne!(i, j);
            counts[i] += 1;
            counts[j] += 1;
        }
    }
    let total = (batches * 8 * 2) as f64;
    // Each pair holds two distinct frames, so a frame appears in a pair with
    // probability 1/2; counts are sums of 8000 such indicators.
    let (p, trials) = (0.5, (batches * 8) as f64);
    let sigma = (trials * p * (1.0 - p)).sqrt();
    for &c in &counts {
        assert!((c as f64 - trials * p).abs() <= 4.0 * sigma, "{counts:?} of {total}");
    }
}

#[test]
fn two_frame_videos_always_pair_both_frames() {
    let (ds, _) = generate(&GenerateConfig {
        num_videos: 10,
        frames_per_video: 2,
        height: 4,
        width: 4,
        ..Default::default()
    })
    .unwrap();
    for s in 0..50 {
        let b = sample_pair_batch(&ds, 10, &AugmentConfig::identity(), s).unwrap();
        for (&i, &j) in b.frame_i.iter().zip(&b.frame_j) {
            assert_eq!(i + j, 1);
        }
    }
    assert!(matches!(
        sample_pair_batch(&ds, 11, &AugmentConfig::identity(), 0),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn augmentation_contracts() {
    let (ds, _) = generate(&GenerateConfig {
        num_videos: 3,
        ..Default::default()
    })
    .unwrap();
    let frame = ds.frame(1, 2);
    let same = augment(frame, 32, 32, &AugmentConfig::identity(), 7);
    assert!(same.iter().zip(frame).all(|(a, b)| (a - b).abs() <= 1e-6));
    let cfg = AugmentConfig::default();
    let a = augment(frame, 32, 32, &cfg, 1);
    let b = augment(frame, 32, 32, &cfg, 2);
    assert!(a.iter().chain(&b).all(|v| (0.0..=1.0).contains(v)));
    assert!(mean_abs_diff(&a, &b) > 0.0);
    assert_eq!(a, augment(frame, 32, 32, &cfg, 1));
}

#[test]
fn dataset_files_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenerateConfig {
        num_videos: 30,
        seed: 9,
        ..Default::default()
    };
    let paths = [dir.path().join("a.ccv1"), dir.path().join("b.ccv1")];
    for p in &paths {
        let (ds, labels) = generate(&cfg).unwrap();
        write_dataset(p, &ds, &labels).unwrap();
    }
    let bytes = std::fs::read(&paths[0]).unwrap();
    assert_eq!(bytes, std::fs::read(&paths[1]).unwrap());
    let (ds, labels) = read_dataset(&paths[0]).unwrap();
    assert_eq!((ds, labels), generate(&cfg).unwrap());

    std::fs::write(&paths[1], &bytes[..bytes.len() - 3]).unwrap();
    let err = read_dataset(&paths[1]).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}
