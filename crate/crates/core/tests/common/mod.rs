//! Shared helpers for the integration tests: random instances and direct
//! 64-bit implementations of the loss formulas.
#![allow(dead_code)]

use cyclecon::losses::LossConfig;
use cyclecon::tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
        .collect()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn unit_rows(rng: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    gaussian_rows(rng, n, d).iter().map(|r| normalize(r)).collect()
}

pub fn to_tensor(rows: &[Vec<f64>], d: usize) -> Tensor<f64> {
    Tensor::matrix(rows.len(), d, rows.iter().flatten().copied().collect()).unwrap()
}

pub fn to_tensor_f32(rows: &[Vec<f64>], d: usize) -> Tensor<f32> {
    Tensor::matrix(rows.len(), d, rows.iter().flatten().map(|&v| v as f32).collect()).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `mean_i −log(exp(s⁺/τ) / (exp(s⁺/τ) + Σ_neg exp(s/τ)))` with cosine `s`.
pub fn oracle_info_nce(q: &[Vec<f64>], pos: &[Vec<f64>], negs: &[Vec<f64>], tau: f64) -> f64 {
    let mut total = 0.0;
    for (qi, pi) in q.iter().zip(pos) {
        let qn = normalize(qi);
        let mut logits = vec![dot(&qn, &normalize(pi)) / tau];
        logits.extend(negs.iter().map(|u| dot(&qn, &normalize(u)) / tau));
        total += log_sum_exp(&logits) - logits[0];
    }
    total / q.len() as f64
}

/// Soft nearest neighbor: `(α rows, q̂ rows)`.
pub fn oracle_soft_nn(q: &[Vec<f64>], u: &[Vec<f64>], tau: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = u[0].len();
    let mut alphas = Vec::new();
    let mut q_hats = Vec::new();
    for qi in q {
        let s: Vec<f64> = u.iter().map(|uj| dot(qi, uj) / tau).collect();
        let lse = log_sum_exp(&s);
        let a: Vec<f64> = s.iter().map(|x| (x - lse).exp()).collect();
        let mut h = vec![0.0; d];
        for (aj, uj) in a.iter().zip(u) {
            for (hk, uk) in h.iter_mut().zip(uj) {
                *hk += aj * uk;
            }
        }
        alphas.push(a);
        q_hats.push(h);
    }
    (alphas, q_hats)
}

/// Cycle-back loss of `q̂` (renormalized through the cosine) against `k_j`.
pub fn oracle_cycle(q_hat: &[Vec<f64>], k: &[Vec<f64>], negs: &[Vec<f64>], tau: f64) -> f64 {
    oracle_info_nce(q_hat, k, negs, tau)
}

/// Evaluates a tape function built from constant inputs and returns its
/// scalar value.
pub fn eval_tape<F>(f: F) -> f64
where
    F: FnOnce(&mut Tape<f64>) -> cyclecon::Result<Var>,
{
    let mut tape = Tape::new();
    let v = f(&mut tape).unwrap();
    tape.value(v).item()
}

pub fn cfg() -> LossConfig {
    LossConfig::default()
}

/// 50 videos of the default generator.
pub fn smoke_data() -> (cyclecon::data::VideoDataset, cyclecon::data::ClassLabels) {
    cyclecon::data::generate(&cyclecon::data::GenerateConfig {
        num_videos: 50,
        ..Default::default()
    })
    .unwrap()
}

/// Two epochs of batch 8 with queues small enough that the cycle term turns
/// on after four steps.
pub fn smoke_config() -> cyclecon::trainer::TrainConfig {
    cyclecon::trainer::TrainConfig {
        epochs: 2,
        batch_size: 8,
        queue_capacity: 64,
        m_nb: 16,
        ..Default::default()
    }
}
