use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    /// `base·0.5·(1 + cos(π·step/total))`.
    Cosine,
    /// `base`, then `×0.1` from 60% of training and `×0.01` from 80%.
    Step,
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Cosine => "cosine",
            LrSchedule::Step => "step",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "cosine" => Ok(LrSchedule::Cosine),
            "step" => Ok(LrSchedule::Step),
            _ => Err(Error::Config(format!(
                "unknown lr_schedule {s:?} (expected cosine or step)"
            ))),
        }
    }
}

/// Learning rate for `step` out of `total_steps`. A run of zero steps keeps
/// the base rate.
pub fn lr_at(schedule: LrSchedule, step: usize, total_steps: usize, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    match schedule {
        LrSchedule::Cosine => base_lr * 0.5 * (1.0 + (PI * frac).cos()),
        LrSchedule::Step => {
            if frac < 0.6 {
                base_lr
            } else if frac < 0.8 {
                base_lr * 0.1
            } else {
                base_lr * 0.01
            }
        }
    }
}
