//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored, unknown keys are rejected and
//! missing keys keep their defaults. [`RunConfig::to_text`] writes every key,
//! so an echoed config reproduces its run exactly.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::BackwardNegatives;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key} must be true or false, got {value:?}"))),
    }
}

fn join<T: ToString>(vals: &[T]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

pub const KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "weight_decay",
    "lr_schedule",
    "loss",
    "temperature",
    "lambda",
    "include_self_view",
    "backward_negatives",
    "top_k",
    "intra_image_weight",
    "intra_video_weight",
    "queue_capacity",
    "m_nb",
    "momentum_coefficient",
    "hidden_widths",
    "embedding_dim",
    "proj_dim",
    "crop_scale_min",
    "crop_scale_max",
    "noise_std",
    "brightness",
    "contrast_min",
    "contrast_max",
    "seed",
    "log_wall_time",
    "data",
    "out",
];

/// Every training key with its current value, in [`KEYS`] order.
pub fn train_entries(t: &TrainConfig) -> Vec<(String, String)> {
    let l = &t.loss;
    let a = &t.augment;
    let values = [
        t.epochs.to_string(),
        t.batch_size.to_string(),
        t.lr.to_string(),
        t.momentum.to_string(),
        t.weight_decay.to_string(),
        t.lr_schedule.to_string(),
        t.preset.to_string(),
        l.temperature.to_string(),
        l.lambda.to_string(),
        l.include_self_view.to_string(),
        match l.backward_negatives {
            BackwardNegatives::Remainder => "remainder".into(),
            BackwardNegatives::NeighborSet => "neighbor_set".into(),
        },
        l.top_k.map_or_else(|| "none".into(), |k| k.to_string()),
        l.intra_image_weight.to_string(),
        l.intra_video_weight.to_string(),
        t.queue_capacity.to_string(),
        t.m_nb.to_string(),
        t.momentum_coefficient.to_string(),
        join(&t.encoder.hidden_widths),
        t.encoder.embedding_dim.to_string(),
        t.encoder.proj_dim.to_string(),
        a.crop_scale.0.to_string(),
        a.crop_scale.1.to_string(),
        a.noise_std.to_string(),
        a.brightness.to_string(),
        a.contrast.0.to_string(),
        a.contrast.1.to_string(),
        t.seed.to_string(),
        t.log_wall_time.to_string(),
    ];
    KEYS.iter().map(|k| k.to_string()).zip(values).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "momentum" => t.momentum = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "lr_schedule" => t.lr_schedule = value.parse()?,
            "loss" => t.preset = value.parse()?,
            "temperature" => t.loss.temperature = parse(key, value)?,
            "lambda" => t.loss.lambda = parse(key, value)?,
            "include_self_view" => t.loss.include_self_view = parse_bool(key, value)?,
            "backward_negatives" => {
                t.loss.backward_negatives = match value {
                    "remainder" => BackwardNegatives::Remainder,
                    "neighbor_set" => BackwardNegatives::NeighborSet,
                    _ => {
                        return Err(Error::Config(format!(
                            "backward_negatives must be remainder or neighbor_set, got {value:?}"
                        )))
                    }
                }
            }
            "top_k" => {
                t.loss.top_k = match value {
                    "none" | "" => None,
                    _ => Some(parse(key, value)?),
                }
            }
            "intra_image_weight" => t.loss.intra_image_weight = parse(key, value)?,
            "intra_video_weight" => t.loss.intra_video_weight = parse(key, value)?,
            "queue_capacity" => t.queue_capacity = parse(key, value)?,
            "m_nb" => t.m_nb = parse(key, value)?,
            "momentum_coefficient" => t.momentum_coefficient = parse(key, value)?,
            "hidden_widths" => {
                t.encoder.hidden_widths = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|w| parse(key, w.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "embedding_dim" => t.encoder.embedding_dim = parse(key, value)?,
            "proj_dim" => t.encoder.proj_dim = parse(key, value)?,
            "crop_scale_min" => t.augment.crop_scale.0 = parse(key, value)?,
            "crop_scale_max" => t.augment.crop_scale.1 = parse(key, value)?,
            "noise_std" => t.augment.noise_std = parse(key, value)?,
            "brightness" => t.augment.brightness = parse(key, value)?,
            "contrast_min" => t.augment.contrast.0 = parse(key, value)?,
            "contrast_max" => t.augment.contrast.1 = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "log_wall_time" => t.log_wall_time = parse_bool(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies the `key = value` lines of `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = train_entries(&self.train);
        if let Some(d) = &self.data {
            out.push(("data".into(), d.display().to_string()));
        }
        if let Some(o) = &self.out {
            out.push(("out".into(), o.display().to_string()));
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
