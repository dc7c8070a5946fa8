//! The optimization loop: pair batch, query/key encoding, losses, SGD on the
//! query network, EMA of the key network, queue update.

mod metrics;
mod schedule;
mod sgd;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;

pub use metrics::{epoch_means, to_csv, MetricsRecord, CSV_HEADER};
pub use schedule::{lr_at, LrSchedule};
pub use sgd::Sgd;

use crate::checkpoint::Checkpoint;
use crate::data::{extra_view, pair_batch_for, AugmentConfig, PairBatch, VideoDataset};
use crate::encoder::{ema_update, init_params, EncoderConfig, MomentumConfig, MomentumPair};
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, cycle_objective, intra_image_loss, intra_video_loss, LossConfig, LossParts,
};
use crate::queue::{top_k_filter, NeighborSample, NeighborSplit, QueueState};
use crate::rng::{derive_seed, stream};
use crate::tensor::{Tape, Tensor};

const TAG_INIT: u64 = 1;
const TAG_EPOCH: u64 = 2;
const TAG_BATCH: u64 = 3;
const TAG_NEIGHBOR: u64 = 4;

/// Augmentation view ids; 0 and 1 are the two frames of a pair batch.
const VIEW_INTRA_IMAGE: u64 = 2;
const VIEW_SELF: u64 = 3;

/// Which objective a run optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossPreset {
    /// Intra-image InfoNCE only: the positive key is a second augmentation of
    /// the query frame.
    IntraImage,
    /// Intra-video InfoNCE (plus the optional weighted intra-image term).
    IntraVideo,
    /// Intra-video plus `λ·` cycle term (plus the optional intra-image term).
    Full,
}

impl fmt::Display for LossPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossPreset::IntraImage => "intra-image",
            LossPreset::IntraVideo => "intra-video",
            LossPreset::Full => "full",
        })
    }
}

impl FromStr for LossPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intra-image" => Ok(LossPreset::IntraImage),
            "intra-video" => Ok(LossPreset::IntraVideo),
            "full" => Ok(LossPreset::Full),
            _ => Err(Error::Config(format!(
                "unknown loss preset {s:?} (expected intra-image, intra-video or full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// SGD momentum.
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub preset: LossPreset,
    pub loss: LossConfig,
    /// Capacity `K` of each memory queue.
    pub queue_capacity: usize,
    /// Neighbor-set size drawn from the cycle-space queue.
    pub m_nb: usize,
    pub momentum_coefficient: f32,
    /// Input height and width are taken from the dataset.
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Record elapsed seconds in the metrics log. Off by default so that logs
    /// of identical runs are byte-identical.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.015,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_schedule: LrSchedule::Cosine,
            preset: LossPreset::Full,
            loss: LossConfig::default(),
            queue_capacity: 4096,
            m_nb: 1024,
            momentum_coefficient: 0.999,
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            log_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: a zero step size is a useful no-op probe.
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be nonnegative, got {}", self.lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "SGD momentum must lie in [0, 1) and weight_decay be nonnegative".into(),
            ));
        }
        if self.queue_capacity < self.batch_size {
            return Err(Error::Config(format!(
                "queue_capacity {} is smaller than batch_size {}",
                self.queue_capacity, self.batch_size
            )));
        }
        if self.m_nb == 0 || self.m_nb >= self.queue_capacity {
            return Err(Error::Config(format!(
                "m_nb must lie in [1, queue_capacity), got {}",
                self.m_nb
            )));
        }
        if let Some(k) = self.loss.top_k {
            if k > self.m_nb {
                return Err(Error::Config(format!("top_k {k} exceeds m_nb {}", self.m_nb)));
            }
        }
        self.loss.validate()?;
        self.augment.validate()?;
        MomentumConfig {
            momentum_coefficient: self.momentum_coefficient,
        }
        .validate()
    }

    pub fn steps_per_epoch(&self, num_videos: usize) -> usize {
        num_videos / self.batch_size
    }

    fn uses_intra_image(&self) -> bool {
        self.preset == LossPreset::IntraImage || self.loss.intra_image_weight > 0.0
    }
}

/// Everything a single step produced besides the updated state.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub record: MetricsRecord,
    /// Neighbor split used by the cycle term; `None` when the term was off.
    pub split: Option<NeighborSplit>,
    pub batch_seed: u64,
}

/// Training state plus the dataset it iterates over.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    dataset: &'a VideoDataset,
    nets: MomentumPair,
    video_queue: QueueState,
    cycle_queue: QueueState,
    sgd: Sgd,
    step: usize,
    order: Option<(usize, Vec<usize>)>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, dataset: &'a VideoDataset) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.encoder.input_height = dataset.height();
        cfg.encoder.input_width = dataset.width();
        cfg.validate()?;
        if cfg.batch_size > dataset.num_videos() {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {} videos in the dataset",
                cfg.batch_size,
                dataset.num_videos()
            )));
        }
        if dataset.frames_per_video() < 2 {
            return Err(Error::Config("videos need at least 2 frames".into()));
        }
        let nets = init_params(&cfg.encoder, derive_seed(cfg.seed, &[TAG_INIT]))?;
        let video_queue = QueueState::new(cfg.queue_capacity, cfg.encoder.proj_dim)?;
        let cycle_queue = video_queue.clone();
        let sgd = Sgd::new(cfg.momentum as f32, cfg.weight_decay as f32);
        Ok(Self {
            cfg,
            dataset,
            nets,
            video_queue,
            cycle_queue,
            sgd,
            step: 0,
            order: None,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn nets(&self) -> &MomentumPair {
        &self.nets
    }

    pub fn video_queue(&self) -> &QueueState {
        &self.video_queue
    }

    pub fn cycle_queue(&self) -> &QueueState {
        &self.cycle_queue
    }

    /// Number of steps taken so far.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg.steps_per_epoch(self.dataset.num_videos())
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.epochs * self.steps_per_epoch()
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            encoder: self.cfg.encoder.clone(),
            nets: self.nets.clone(),
            queues: Some((self.video_queue.clone(), self.cycle_queue.clone())),
            step: self.step as u64,
        }
    }

    /// The batch the next step will train on: the epoch's video permutation
    /// cut into consecutive `batch_size` chunks, the last partial chunk
    /// dropped.
    pub fn next_batch(&mut self) -> Result<PairBatch> {
        let spe = self.steps_per_epoch();
        let epoch = self.step / spe;
        let b = self.step % spe;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.dataset.num_videos()).collect();
            perm.shuffle(&mut stream(self.cfg.seed, &[TAG_EPOCH, epoch as u64]));
            self.order = Some((epoch, perm));
        }
        let perm = &self.order.as_ref().unwrap().1;
        let bs = self.cfg.batch_size;
        let seed = derive_seed(self.cfg.seed, &[TAG_BATCH, self.step as u64]);
        pair_batch_for(self.dataset, &perm[b * bs..(b + 1) * bs], &self.cfg.augment, seed)
    }

    pub fn train_step(&mut self) -> Result<StepOutcome> {
        let batch = self.next_batch()?;
        self.step_on(&batch)
    }

    /// Runs the remaining steps and returns their metrics.
    pub fn run(&mut self) -> Result<Vec<MetricsRecord>> {
        let mut records = Vec::with_capacity(self.total_steps() - self.step.min(self.total_steps()));
        while !self.is_done() {
            records.push(self.train_step()?.record);
        }
        Ok(records)
    }

    /// One step on `batch`. The key network, queues and neighbor sets are
    /// all outside the tape, so gradients reach the query network only.
    pub fn step_on(&mut self, batch: &PairBatch) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        let spe = self.steps_per_epoch().max(1);
        let (step, epoch) = (self.step, self.step / spe);
        let lr = lr_at(cfg.lr_schedule, step, self.total_steps(), cfg.lr);
        let numeric = |e: Error| match e {
            Error::Degenerate { .. } | Error::Numeric(_) => Error::Numeric(format!(
                "step {step} (epoch {epoch}, batch seed {:#018x}): {e}",
                batch.seed
            )),
            other => other,
        };

        // Key path.
        let key = &self.nets.key;
        let (kv_j, kc_j) = key.encode(&batch.x_j).map_err(numeric)?;
        let kv_i = if cfg.uses_intra_image() {
            let x = extra_view(self.dataset, batch, &cfg.augment, VIEW_INTRA_IMAGE)?;
            Some(key.encode(&x).map_err(numeric)?.0)
        } else {
            None
        };
        let cycle_on = cfg.preset == LossPreset::Full
            && self.cycle_queue.fill() >= 2 * cfg.m_nb;
        let self_views = if cycle_on && cfg.loss.include_self_view {
            let x = extra_view(self.dataset, batch, &cfg.augment, VIEW_SELF)?;
            Some(key.encode(&x).map_err(numeric)?.1)
        } else {
            None
        };

        // Query path.
        let mut tape = Tape::new();
        let fwd = self.nets.query.forward(&mut tape, &batch.x_i, true).map_err(numeric)?;
        let neg_slots = self.video_queue.unmasked_slots(&batch.video_ids);
        let negatives = tape.constant(self.video_queue.gather(&neg_slots));

        let mut parts = LossParts::default();
        if let Some(kv_i) = &kv_i {
            let k = tape.constant(kv_i.clone());
            parts.intra_image = Some(intra_image_loss(&mut tape, fwd.z_video, k, negatives, &cfg.loss)?);
        }
        if cfg.preset != LossPreset::IntraImage {
            let k = tape.constant(kv_j.clone());
            parts.intra_video = Some(intra_video_loss(&mut tape, fwd.z_video, k, negatives, &cfg.loss)?);
        }

        let mut used_split = None;
        if cycle_on {
            let seed = derive_seed(cfg.seed, &[TAG_NEIGHBOR, step as u64]);
            if let NeighborSample::Ready(split) =
                self.cycle_queue.sample_neighbor_split(cfg.m_nb, &batch.video_ids, seed)?
            {
                let split = match cfg.loss.top_k {
                    Some(k) => top_k_filter(tape.value(fwd.z_cycle), split, k)?,
                    None => split,
                };
                let kc = tape.constant(kc_j.clone());
                let terms = cycle_objective(&mut tape, fwd.z_cycle, kc, &split, self_views.as_ref(), &cfg.loss)
                    .map_err(numeric)?;
                parts.cycle = Some(terms.loss);
                used_split = Some(split);
            }
        }

        let total = match cfg.preset {
            LossPreset::IntraImage => parts.intra_image.expect("intra-image term"),
            _ => combined_loss(&mut tape, parts, &cfg.loss)?,
        };
        let value = |v: Option<_>| v.map(|v| tape.value(v).item() as f64);
        let loss_total = tape.value(total).item() as f64;
        let record = MetricsRecord {
            epoch,
            step,
            loss_total,
            loss_intra_video: value(parts.intra_video),
            loss_cycle: value(parts.cycle),
            loss_intra_image: value(parts.intra_image),
            lr,
            queue_fill: 0,
            wall_time: 0.0,
        };
        if !record.losses_finite() {
            return Err(numeric(Error::Numeric(format!(
                "loss is not finite (total {loss_total})"
            ))));
        }

        let mut grads = tape.backward(total)?;
        let grads: Vec<Tensor<f32>> = fwd
            .params
            .iter()
            .map(|&p| grads.take(p).expect("query parameters require grad"))
            .collect();
        self.sgd.step(self.nets.query.params_mut(), &grads, lr as f32)?;
        ema_update(
            &mut self.nets.key,
            &self.nets.query,
            &MomentumConfig {
                momentum_coefficient: cfg.momentum_coefficient,
            },
        )?;
        let video_keys = match cfg.preset {
            LossPreset::IntraImage => kv_i.expect("intra-image keys"),
            _ => kv_j,
        };
        self.video_queue.enqueue_dequeue(&video_keys, &batch.video_ids)?;
        self.cycle_queue.enqueue_dequeue(&kc_j, &batch.video_ids)?;

        self.step += 1;
        Ok(StepOutcome {
            record: MetricsRecord {
                queue_fill: self.video_queue.fill(),
                wall_time: if self.cfg.log_wall_time {
                    self.started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
                ..record
            },
            split: used_split,
            batch_seed: batch.seed,
        })
    }
}

/// Files written by [`fit`].
#[derive(Clone, Debug)]
pub struct FitReport {
    pub final_checkpoint: PathBuf,
    pub metrics_csv: PathBuf,
    pub summary_json: PathBuf,
    pub records: Vec<MetricsRecord>,
    pub elapsed_seconds: f64,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains for `cfg.epochs` epochs, writing into `out_dir`:
/// `metrics.csv`, `epoch_NNN.cckp` after every epoch, `final.cckp` and
/// `summary.json`. A non-finite loss aborts the run after writing
/// `nonfinite.txt` with the offending batch seed.
pub fn fit(cfg: &TrainConfig, dataset: &VideoDataset, out_dir: &Path) -> Result<FitReport> {
    let started = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trainer = Trainer::new(cfg, dataset)?;
    let metrics_csv = out_dir.join("metrics.csv");
    let mut records = Vec::with_capacity(trainer.total_steps());
    let spe = trainer.steps_per_epoch();
    while !trainer.is_done() {
        let batch = trainer.next_batch()?;
        match trainer.step_on(&batch) {
            Ok(out) => records.push(out.record),
            Err(Error::Numeric(msg)) => {
                let diag = out_dir.join("nonfinite.txt");
                let ids: Vec<String> = batch.video_ids.iter().map(|v| v.to_string()).collect();
                write(
                    &diag,
                    format!(
                        "step = {}\nbatch_seed = {:#018x}\nvideo_ids = {}\nerror = {msg}\n",
                        trainer.step(),
                        batch.seed,
                        ids.join(",")
                    ),
                )?;
                write(&metrics_csv, to_csv(&records))?;
                return Err(Error::Numeric(format!("{msg}; diagnostic written to {}", diag.display())));
            }
            Err(e) => return Err(e),
        }
        if trainer.step() % spe == 0 {
            let epoch = trainer.step() / spe;
            trainer.checkpoint().save(&out_dir.join(format!("epoch_{epoch:03}.cckp")))?;
        }
    }
    write(&metrics_csv, to_csv(&records))?;
    let final_checkpoint = out_dir.join("final.cckp");
    trainer.checkpoint().save(&final_checkpoint)?;

    let elapsed_seconds = started.elapsed().as_secs_f64();
    let config: serde_json::Map<String, serde_json::Value> = crate::config::train_entries(trainer.config())
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    let last = records.last();
    let summary = serde_json::json!({
        "steps": records.len(),
        "epochs": cfg.epochs,
        "final_loss_total": last.map(|r| r.loss_total),
        "final_loss_intra_video": last.and_then(|r| r.loss_intra_video),
        "final_loss_cycle": last.and_then(|r| r.loss_cycle),
        "final_loss_intra_image": last.and_then(|r| r.loss_intra_image),
        "epoch_mean_loss_total": epoch_means(&records),
        "final_checkpoint": final_checkpoint.display().to_string(),
        "elapsed_seconds": elapsed_seconds,
        "config": config,
    });
    let summary_json = out_dir.join("summary.json");
    write(&summary_json, serde_json::to_string_pretty(&summary).unwrap() + "\n")?;
    Ok(FitReport {
        final_checkpoint,
        metrics_csv,
        summary_json,
        records,
        elapsed_seconds,
    })
}
