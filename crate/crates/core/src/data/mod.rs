//! Procedural toy videos: each video shows one class prototype drifting
//! smoothly across a few frames. Class labels are kept apart from the pixels
//! and only handed to evaluation code.

mod augment;
mod format;
mod render;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

pub use augment::{augment, AugmentConfig};
pub use format::{read_dataset, read_dataset_bytes, write_dataset, write_dataset_bytes, HEADER_LEN, MAGIC, VERSION};
pub use render::NUM_PROTOTYPES;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::tensor::Tensor;
use render::{base_angle, paint_strokes, render_on, Grating, Pose, Stroke};

/// Frames of every video, without labels.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoDataset {
    pub(crate) num_videos: usize,
    pub(crate) frames_per_video: usize,
    pub(crate) height: usize,
    pub(crate) width: usize,
    pub(crate) num_classes: usize,
    pub(crate) seed: u64,
    /// `num_videos × frames_per_video × height × width`, row-major.
    pub(crate) pixels: Vec<f32>,
}

/// Hidden class id per video; evaluation only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassLabels(pub Vec<u16>);

impl ClassLabels {
    pub fn of(&self, video: usize) -> usize {
        self.0[video] as usize
    }
}

impl VideoDataset {
    pub fn num_videos(&self) -> usize {
        self.num_videos
    }

    pub fn frames_per_video(&self) -> usize {
        self.frames_per_video
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frame(&self, video: usize, frame: usize) -> &[f32] {
        let len = self.frame_len();
        let start = (video * self.frames_per_video + frame) * len;
        &self.pixels[start..start + len]
    }

    /// Keeps only the listed videos, renumbered from zero in the given order.
    pub fn subset(&self, videos: &[usize], labels: &ClassLabels) -> (VideoDataset, ClassLabels) {
        let per_video = self.frames_per_video * self.frame_len();
        let mut pixels = Vec::with_capacity(videos.len() * per_video);
        for &v in videos {
            pixels.extend_from_slice(&self.pixels[v * per_video..(v + 1) * per_video]);
        }
        (
            VideoDataset {
                num_videos: videos.len(),
                pixels,
                ..self.clone()
            },
            ClassLabels(videos.iter().map(|&v| labels.0[v]).collect()),
        )
    }
}

/// Generation parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Maximum number of distractor strokes drawn independently on every
    /// frame.
    pub clutter: usize,
    /// Maximum number of distractor strokes fixed for a whole video.
    pub static_clutter: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            num_videos: 2000,
            frames_per_video: 4,
            num_classes: 10,
            height: 32,
            width: 32,
            seed: 0,
            clutter: 6,
            static_clutter: 0,
        }
    }
}

fn video_poses(class: usize, frames: usize, rng: &mut impl Rng) -> Vec<Pose> {
    let (ar, sp, tr, vel, gr) = (0.15, 0.12, 0.1, 0.07, 0.04);
    let base = Pose {
        cx: rng.gen_range(-tr..tr),
        cy: rng.gen_range(-tr..tr),
        angle: base_angle(class) + rng.gen_range(-ar..ar),
        scale: rng.gen_range(0.8..1.1),
        foreground: rng.gen_range(0.6..1.0),
        background: rng.gen_range(0.0..0.3),
    };
    let (vx, vy): (f32, f32) = (rng.gen_range(-vel..vel), rng.gen_range(-vel..vel));
    let spin: f32 = rng.gen_range(-sp..sp);
    let grow: f32 = rng.gen_range(-gr..gr);
    let fade: f32 = rng.gen_range(-0.05..0.05);
    let mid = (frames as f32 - 1.0) / 2.0;
    (0..frames)
        .map(|t| {
            let dt = t as f32 - mid;
            Pose {
                cx: base.cx + vx * dt,
                cy: base.cy + vy * dt,
                angle: base.angle + spin * dt,
                scale: base.scale + grow * dt,
                foreground: (base.foreground + fade * dt).clamp(0.45, 1.0),
                background: base.background,
            }
        })
        .collect()
}

fn video_backdrops(frames: usize, rng: &mut impl Rng) -> Vec<Grating> {
    let amplitude = rng.gen_range(0.0..=0.4);
    let frequency = rng.gen_range(1.5..4.0);
    let angle0 = rng.gen_range(0.0..std::f32::consts::PI);
    let spin = rng.gen_range(0.4..1.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 };
    let phase0 = rng.gen_range(0.0..std::f32::consts::TAU);
    let drift = rng.gen_range(1.0..2.5);
    (0..frames)
        .map(|t| Grating {
            amplitude,
            frequency,
            angle: angle0 + spin * t as f32,
            phase: phase0 + drift * t as f32,
        })
        .collect()
}

fn clutter(max: usize, rng: &mut impl Rng) -> Vec<Stroke> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| Stroke {
            cx: rng.gen_range(-0.9..0.9),
            cy: rng.gen_range(-0.9..0.9),
            angle: rng.gen_range(0.0..std::f32::consts::PI),
            half_length: rng.gen_range(0.08..0.3),
            half_width: rng.gen_range(0.04..0.08),
            intensity: rng.gen_range(0.3..1.0),
        })
        .collect()
}

/// Renders a labeled toy video set. Deterministic in `cfg.seed`; each video
/// draws from its own seed stream.
pub fn generate(cfg: &GenerateConfig) -> Result<(VideoDataset, ClassLabels)> {
    if cfg.num_videos == 0 {
        return Err(Error::param("num_videos must be positive"));
    }
    if cfg.frames_per_video < 2 {
        return Err(Error::param("frames_per_video must be at least 2"));
    }
    if cfg.num_classes == 0 || cfg.num_classes > NUM_PROTOTYPES {
        return Err(Error::param(format!(
            "num_classes must lie in 1..={NUM_PROTOTYPES}, got {}",
            cfg.num_classes
        )));
    }
    if cfg.height < 2 || cfg.width < 2 {
        return Err(Error::param("frames must be at least 2x2"));
    }
    let frame_len = cfg.height * cfg.width;
    let per_video = cfg.frames_per_video * frame_len;
    let mut pixels = vec![0.0f32; cfg.num_videos * per_video];
    let labels: Vec<u16> = pixels
        .par_chunks_mut(per_video)
        .enumerate()
        .map(|(v, out)| {
            let mut rng = stream(cfg.seed, &[v as u64]);
            let class = rng.gen_range(0..cfg.num_classes);
            let poses = video_poses(class, cfg.frames_per_video, &mut rng);
            let backdrops = video_backdrops(cfg.frames_per_video, &mut rng);
            let static_strokes = clutter(cfg.static_clutter, &mut rng);
            for ((pose, backdrop), frame) in poses.iter().zip(&backdrops).zip(out.chunks_mut(frame_len)) {
                render_on(class, pose, backdrop, cfg.height, cfg.width, frame);
                paint_strokes(&static_strokes, cfg.height, cfg.width, frame);
                let strokes = clutter(cfg.clutter, &mut rng);
                paint_strokes(&strokes, cfg.height, cfg.width, frame);
            }
            class as u16
        })
        .collect();
    Ok((
        VideoDataset {
            num_videos: cfg.num_videos,
            frames_per_video: cfg.frames_per_video,
            height: cfg.height,
            width: cfg.width,
            num_classes: cfg.num_classes,
            seed: cfg.seed,
            pixels,
        },
        ClassLabels(labels),
    ))
}

/// Two augmented frames from each of `n` distinct videos.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub x_i: Tensor<f32>,
    pub x_j: Tensor<f32>,
    pub video_ids: Vec<u32>,
    pub frame_i: Vec<usize>,
    pub frame_j: Vec<usize>,
    /// Seed the batch was built from, for diagnostics and extra views.
    pub seed: u64,
}

/// Seed of the augmentation applied to view `view` of batch row `row`.
pub fn view_seed(batch_seed: u64, row: usize, view: u64) -> u64 {
    derive_seed(batch_seed, &[row as u64, view])
}

/// Builds a pair batch for the given videos: two distinct frames per video,
/// each independently augmented.
pub fn pair_batch_for(
    dataset: &VideoDataset,
    videos: &[usize],
    aug: &AugmentConfig,
    seed: u64,
) -> Result<PairBatch> {
    let (h, w) = (dataset.height, dataset.width);
    let len = dataset.frame_len();
    let n = videos.len();
    let mut frame_i = Vec::with_capacity(n);
    let mut frame_j = Vec::with_capacity(n);
    for (row, _) in videos.iter().enumerate() {
        let mut rng = stream(seed, &[row as u64, u64::MAX]);
        let pick = index::sample(&mut rng, dataset.frames_per_video, 2);
        frame_i.push(pick.index(0));
        frame_j.push(pick.index(1));
    }
    let views: Vec<(Vec<f32>, Vec<f32>)> = videos
        .par_iter()
        .enumerate()
        .map(|(row, &v)| {
            (
                augment(dataset.frame(v, frame_i[row]), h, w, aug, view_seed(seed, row, 0)),
                augment(dataset.frame(v, frame_j[row]), h, w, aug, view_seed(seed, row, 1)),
            )
        })
        .collect();
    let mut xi = Vec::with_capacity(n * len);
    let mut xj = Vec::with_capacity(n * len);
    for (a, b) in views {
        xi.extend(a);
        xj.extend(b);
    }
    Ok(PairBatch {
        x_i: Tensor::matrix(n, len, xi)?,
        x_j: Tensor::matrix(n, len, xj)?,
        video_ids: videos.iter().map(|&v| v as u32).collect(),
        frame_i,
        frame_j,
        seed,
    })
}

/// Draws `batch_size` distinct videos uniformly and builds their pair batch.
pub fn sample_pair_batch(
    dataset: &VideoDataset,
    batch_size: usize,
    aug: &AugmentConfig,
    seed: u64,
) -> Result<PairBatch> {
    if batch_size > dataset.num_videos {
        return Err(Error::param(format!(
            "batch_size {batch_size} exceeds {} videos",
            dataset.num_videos
        )));
    }
    let mut rng = stream(seed, &[u64::MAX - 1]);
    let videos = index::sample(&mut rng, dataset.num_videos, batch_size).into_vec();
    pair_batch_for(dataset, &videos, aug, seed)
}

/// Another augmentation of each row's first frame, used for intra-image keys
/// and self views.
pub fn extra_view(
    dataset: &VideoDataset,
    batch: &PairBatch,
    aug: &AugmentConfig,
    view: u64,
) -> Result<Tensor<f32>> {
    let (h, w) = (dataset.height, dataset.width);
    let rows: Vec<Vec<f32>> = batch
        .video_ids
        .par_iter()
        .enumerate()
        .map(|(row, &v)| {
            augment(
                dataset.frame(v as usize, batch.frame_i[row]),
                h,
                w,
                aug,
                view_seed(batch.seed, row, view),
            )
        })
        .collect();
    Tensor::from_rows(&rows, dataset.frame_len())
}

/// Un-augmented frames of the given `(video, frame)` pairs as rows.
pub fn frames_matrix(dataset: &VideoDataset, ids: &[(usize, usize)]) -> Tensor<f32> {
    let len = dataset.frame_len();
    let mut data = Vec::with_capacity(ids.len() * len);
    for &(v, f) in ids {
        data.extend_from_slice(dataset.frame(v, f));
    }
    Tensor::matrix(ids.len(), len, data).unwrap()
}
