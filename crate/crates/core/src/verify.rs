//! Randomized gradient checks of the contrastive objectives.
//!
//! Every instance draws raw (unnormalized) query rows, l2-normalizes them on
//! the tape and compares the reverse-mode gradient of the loss with central
//! finite differences at 64-bit precision.

use rand::Rng;

use crate::error::Result;
use crate::losses::{
    combined_loss, cycle_loss, intra_image_loss, intra_video_loss, soft_nearest_neighbor, LossConfig,
    LossParts,
};
use crate::rng::stream;
use crate::tensor::{gradcheck, Tape, Tensor, Var};

/// Finite-difference step used by [`gradient_suite`].
pub const GRADCHECK_STEP: f64 = 1e-4;
/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub const LOSS_NAMES: [&str; 4] = ["intra_image", "intra_video", "soft_neighbor_cycle", "combined"];

/// Worst relative gradient error of one loss over all trials.
#[derive(Clone, Debug, PartialEq)]
pub struct LossCheck {
    pub name: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    /// Trial index that produced the worst error.
    pub worst_trial: usize,
}

impl LossCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

fn unit(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    gaussian(rng, rows, cols).l2_normalized().expect("gaussian rows are nonzero")
}

/// One random instance: sizes within `n ≤ 8, d ≤ 16, |U| ≤ 32, remainder ≤ 32`.
struct Instance {
    q_video: Tensor<f64>,
    q_cycle: Tensor<f64>,
    k: Tensor<f64>,
    negatives: Tensor<f64>,
    u: Tensor<f64>,
    remainder: Tensor<f64>,
}

impl Instance {
    fn draw(rng: &mut impl Rng) -> Self {
        let n = rng.gen_range(1..=8);
        let d = rng.gen_range(2..=16);
        let m = rng.gen_range(1..=32);
        let r = rng.gen_range(1..=32);
        let neg = rng.gen_range(1..=32);
        Self {
            q_video: gaussian(rng, n, d),
            q_cycle: gaussian(rng, n, d),
            k: unit(rng, n, d),
            negatives: unit(rng, neg, d),
            u: unit(rng, m, d),
            remainder: unit(rng, r, d),
        }
    }
}

fn cycle_term(tape: &mut Tape<f64>, q_raw: Var, inst: &Instance, cfg: &LossConfig) -> Result<Var> {
    let q = tape.l2_normalize(q_raw)?;
    let u = tape.constant(inst.u.clone());
    let k = tape.constant(inst.k.clone());
    let rem = tape.constant(inst.remainder.clone());
    let soft = soft_nearest_neighbor(tape, q, u, cfg)?;
    cycle_loss(tape, soft.q_hat, k, rem, cfg)
}

fn check_one(which: usize, inst: &Instance, cfg: &LossConfig) -> Result<f64> {
    let report = match which {
        0 | 1 => gradcheck(
            |tape, v| {
                let q = tape.l2_normalize(v[0])?;
                let k = tape.constant(inst.k.clone());
                let neg = tape.constant(inst.negatives.clone());
                if which == 0 {
                    intra_image_loss(tape, q, k, neg, cfg)
                } else {
                    intra_video_loss(tape, q, k, neg, cfg)
                }
            },
            std::slice::from_ref(&inst.q_video),
            GRADCHECK_STEP,
        )?,
        2 => gradcheck(
            |tape, v| cycle_term(tape, v[0], inst, cfg),
            std::slice::from_ref(&inst.q_cycle),
            GRADCHECK_STEP,
        )?,
        _ => {
            let cfg = LossConfig {
                intra_image_weight: 0.5,
                ..cfg.clone()
            };
            gradcheck(
                |tape, v| {
                    let qv = tape.l2_normalize(v[0])?;
                    let k = tape.constant(inst.k.clone());
                    let neg = tape.constant(inst.negatives.clone());
                    let intra_video = intra_video_loss(tape, qv, k, neg, &cfg)?;
                    let intra_image = intra_image_loss(tape, qv, k, neg, &cfg)?;
                    let cycle = cycle_term(tape, v[1], inst, &cfg)?;
                    let parts = LossParts {
                        intra_video: Some(intra_video),
                        cycle: Some(cycle),
                        intra_image: Some(intra_image),
                    };
                    combined_loss(tape, parts, &cfg)
                },
                &[inst.q_video.clone(), inst.q_cycle.clone()],
                GRADCHECK_STEP,
            )?
        }
    };
    Ok(report.max_rel_error)
}

/// Gradient-checks every loss on `trials` random instances derived from
/// `seed` at the given loss configuration.
pub fn gradient_suite(seed: u64, trials: usize, cfg: &LossConfig) -> Result<Vec<LossCheck>> {
    cfg.validate()?;
    let mut out: Vec<LossCheck> = LOSS_NAMES
        .iter()
        .map(|&name| LossCheck {
            name,
            trials,
            max_rel_error: 0.0,
            worst_trial: 0,
        })
        .collect();
    for trial in 0..trials {
        let mut rng = stream(seed, &[trial as u64]);
        let inst = Instance::draw(&mut rng);
        for (which, check) in out.iter_mut().enumerate() {
            let err = check_one(which, &inst, cfg)?;
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_trial = trial;
            }
        }
    }
    Ok(out)
}
