//! Contrastive objectives: intra-image and intra-video InfoNCE, the soft
//! nearest neighbor forward step, the cycle-back classification loss and
//! their weighted combination.
//!
//! All similarity inputs are unit rows, so dot products are cosine
//! similarities. Positive keys, queue rows and neighbor sets enter as tape
//! constants; gradients only reach the query side.

use crate::error::{Error, Result};
use crate::queue::NeighborSplit;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Maximum deviation from unit norm accepted on similarity inputs.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Which rows serve as negatives in the cycle-back classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackwardNegatives {
    /// Queue entries left over after drawing the neighbor set.
    Remainder,
    /// The neighbor set itself (denominator over `{U, k_j}`).
    NeighborSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    /// Weight of the cycle term.
    pub lambda: f64,
    /// Add a second augmented key view of each query to its own neighbor set.
    pub include_self_view: bool,
    pub backward_negatives: BackwardNegatives,
    pub top_k: Option<usize>,
    pub intra_image_weight: f64,
    pub intra_video_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            lambda: 0.1,
            include_self_view: false,
            backward_negatives: BackwardNegatives::Remainder,
            top_k: None,
            intra_image_weight: 0.0,
            intra_video_weight: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, w) in [
            ("lambda", self.lambda),
            ("intra_image_weight", self.intra_image_weight),
            ("intra_video_weight", self.intra_video_weight),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("{name} must be nonnegative, got {w}")));
            }
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be positive".into()));
        }
        Ok(())
    }

    fn tau<T: Scalar>(&self) -> T {
        T::from_f64_lossy(self.temperature)
    }
}

fn check_unit<T: Scalar>(tape: &Tape<T>, v: Var, what: &str) -> Result<()> {
    let dev = tape.value(v).max_unit_deviation();
    if dev > UNIT_TOLERANCE {
        return Err(Error::Contract(format!(
            "{what} rows must be unit norm (deviation {dev:e})"
        )));
    }
    Ok(())
}

fn check_same_shape<T: Scalar>(tape: &Tape<T>, a: Var, b: Var, op: &'static str) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::Dimension {
            op,
            lhs: tape.value(a).shape().to_vec(),
            rhs: tape.value(b).shape().to_vec(),
        });
    }
    Ok(())
}

/// Extra per-row negatives: rows of `rows` whose flag in `mask` (`n×m`) is
/// set count as negatives for that query only.
#[derive(Clone, Copy, Debug)]
pub struct RowNegatives<'a> {
    pub rows: Var,
    pub mask: &'a [bool],
}

/// `mean_i −log( exp(q_i·p_i/τ) / (exp(q_i·p_i/τ) + Σ_neg exp(q_i·u/τ)) )`
fn info_nce<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    positive: Var,
    negatives: Var,
    extra: Option<RowNegatives<'_>>,
    tau: T,
) -> Result<Var> {
    let n = tape.value(q).rows();
    let mut columns = vec![tape.row_dot(q, positive)?];
    if tape.value(negatives).rows() > 0 {
        if tape.value(negatives).cols() != tape.value(q).cols() {
            return Err(Error::Dimension {
                op: "negatives",
                lhs: tape.value(q).shape().to_vec(),
                rhs: tape.value(negatives).shape().to_vec(),
            });
        }
        columns.push(tape.matmul_t(q, negatives)?);
    }
    if let Some(extra) = extra {
        let sims = tape.matmul_t(q, extra.rows)?;
        columns.push(tape.mask_fill(sims, extra.mask.to_vec())?);
    }
    let logits = if columns.len() == 1 {
        columns[0]
    } else {
        tape.concat_cols(&columns)?
    };
    tape.cross_entropy(logits, &vec![0; n], tau)
}

/// Intra-image objective: `k_i` is another augmentation of the query image.
pub fn intra_image_loss<T: Scalar>(
    tape: &mut Tape<T>,
    q_i: Var,
    k_i: Var,
    negatives: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    check_same_shape(tape, q_i, k_i, "intra_image_loss")?;
    check_unit(tape, q_i, "query")?;
    check_unit(tape, k_i, "positive key")?;
    check_unit(tape, negatives, "negative")?;
    info_nce(tape, q_i, k_i, negatives, None, cfg.tau())
}

/// Intra-video objective: `k_j` encodes a different frame of the same video.
pub fn intra_video_loss<T: Scalar>(
    tape: &mut Tape<T>,
    q_i: Var,
    k_j: Var,
    negatives: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    check_same_shape(tape, q_i, k_j, "intra_video_loss")?;
    check_unit(tape, q_i, "query")?;
    check_unit(tape, k_j, "positive key")?;
    check_unit(tape, negatives, "negative")?;
    info_nce(tape, q_i, k_j, negatives, None, cfg.tau())
}

/// Soft nearest neighbor `q̂` and its weights `α`.
#[derive(Clone, Copy, Debug)]
pub struct SoftNeighborResult {
    pub q_hat: Var,
    pub alpha: Var,
}

/// `α = softmax(q·Uᵀ/τ)` row-wise, `q̂ = α·U`.
pub fn soft_nearest_neighbor<T: Scalar>(
    tape: &mut Tape<T>,
    q_cycle: Var,
    u: Var,
    cfg: &LossConfig,
) -> Result<SoftNeighborResult> {
    soft_nearest_neighbor_masked(tape, q_cycle, u, None, cfg)
}

/// As [`soft_nearest_neighbor`], restricting query `i` to the rows `j` of
/// `u` with `keep[i·m + j]` set.
pub fn soft_nearest_neighbor_masked<T: Scalar>(
    tape: &mut Tape<T>,
    q_cycle: Var,
    u: Var,
    keep: Option<&[bool]>,
    cfg: &LossConfig,
) -> Result<SoftNeighborResult> {
    let m = tape.value(u).rows();
    if m == 0 {
        return Err(Error::param("neighbor set is empty"));
    }
    check_unit(tape, q_cycle, "cycle query")?;
    check_unit(tape, u, "neighbor")?;
    let mut sims = tape.matmul_t(q_cycle, u)?;
    if let Some(keep) = keep {
        if let Some(row) = keep.chunks(m).position(|r| !r.contains(&true)) {
            return Err(Error::param(format!("query row {row} has an empty neighbor set")));
        }
        sims = tape.mask_fill(sims, keep.to_vec())?;
    }
    let alpha = tape.softmax_rows(sims, cfg.tau())?;
    let q_hat = tape.matmul(alpha, u)?;
    Ok(SoftNeighborResult { q_hat, alpha })
}

/// Cycle-back classification of `q̂` against `k_j` and `negatives`. `q̂` is
/// renormalized first, matching the cosine similarity in the objective.
pub fn cycle_loss<T: Scalar>(
    tape: &mut Tape<T>,
    q_hat: Var,
    k_j: Var,
    negatives: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    cycle_loss_with(tape, q_hat, k_j, negatives, None, cfg)
}

/// [`cycle_loss`] with additional per-row negatives.
pub fn cycle_loss_with<T: Scalar>(
    tape: &mut Tape<T>,
    q_hat: Var,
    k_j: Var,
    negatives: Var,
    extra: Option<RowNegatives<'_>>,
    cfg: &LossConfig,
) -> Result<Var> {
    check_same_shape(tape, q_hat, k_j, "cycle_loss")?;
    check_unit(tape, k_j, "positive key")?;
    check_unit(tape, negatives, "negative")?;
    let q_n = tape.l2_normalize(q_hat)?;
    info_nce(tape, q_n, k_j, negatives, extra, cfg.tau())
}

/// Terms of the combined objective; absent terms are skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossParts {
    pub intra_video: Option<Var>,
    pub cycle: Option<Var>,
    pub intra_image: Option<Var>,
}

/// `w_v·L_intra-video + λ·L_cycle + w_i·L_intra-image`.
pub fn combined_loss<T: Scalar>(
    tape: &mut Tape<T>,
    parts: LossParts,
    cfg: &LossConfig,
) -> Result<Var> {
    let weighted = [
        (parts.intra_video, cfg.intra_video_weight),
        (parts.cycle, cfg.lambda),
        (parts.intra_image, cfg.intra_image_weight),
    ];
    let mut total: Option<Var> = None;
    for (term, w) in weighted {
        let Some(term) = term else { continue };
        let scaled = if w == 1.0 {
            term
        } else {
            tape.scale(term, T::from_f64_lossy(w))
        };
        total = Some(match total {
            Some(acc) => tape.add(acc, scaled)?,
            None => scaled,
        });
    }
    Ok(match total {
        Some(t) => t,
        None => tape.constant(Tensor::scalar(T::zero())),
    })
}

/// Tape handles of one cycle-objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct CycleTerms {
    pub loss: Var,
    pub soft: SoftNeighborResult,
}

/// Full cycle objective for a batch: forward soft nearest neighbor over the
/// split's neighbor set (optionally extended by per-query self views and
/// narrowed by a top-K mask), then the backward classification with
/// negatives chosen by `cfg.backward_negatives`.
pub fn cycle_objective<T: Scalar>(
    tape: &mut Tape<T>,
    q_cycle: Var,
    k_j: Var,
    split: &NeighborSplit,
    self_views: Option<&Tensor<T>>,
    cfg: &LossConfig,
) -> Result<CycleTerms> {
    let n = tape.value(q_cycle).rows();
    let m = split.len_u();
    let u_rows: Tensor<T> = split.u.cast();
    let (rows, nb_mask) = match self_views {
        None => (u_rows, split.keep.clone()),
        Some(views) => {
            if views.rows() != n {
                return Err(Error::Dimension {
                    op: "self views",
                    lhs: vec![n],
                    rhs: views.shape().to_vec(),
                });
            }
            let total = m + n;
            let mut mask = vec![false; n * total];
            for i in 0..n {
                for j in 0..m {
                    mask[i * total + j] = split.keep.as_ref().map_or(true, |k| k[i * m + j]);
                }
                mask[i * total + m + i] = true;
            }
            (Tensor::vstack(&[&u_rows, views])?, Some(mask))
        }
    };
    let total = rows.rows();
    let nb = tape.constant(rows);
    let soft = soft_nearest_neighbor_masked(tape, q_cycle, nb, nb_mask.as_deref(), cfg)?;

    let d = tape.value(k_j).cols();
    match cfg.backward_negatives {
        BackwardNegatives::Remainder => {
            let remainder = tape.constant(split.remainder.cast());
            // Rows of U dropped by a top-K filter stay negatives for that query.
            let dropped: Option<Vec<bool>> = split.keep.as_ref().map(|keep| {
                let mut mask = vec![false; n * total];
                for i in 0..n {
                    for j in 0..m {
                        mask[i * total + j] = !keep[i * m + j];
                    }
                }
                mask
            });
            let dropped = dropped.filter(|mask| mask.contains(&true));
            let extra = dropped.as_deref().map(|mask| RowNegatives { rows: nb, mask });
            let loss = cycle_loss_with(tape, soft.q_hat, k_j, remainder, extra, cfg)?;
            Ok(CycleTerms { loss, soft })
        }
        BackwardNegatives::NeighborSet => {
            let loss = match &nb_mask {
                None => cycle_loss(tape, soft.q_hat, k_j, nb, cfg)?,
                Some(mask) => {
                    let none = tape.constant(Tensor::zeros(vec![0, d]));
                    let extra = RowNegatives { rows: nb, mask };
                    cycle_loss_with(tape, soft.q_hat, k_j, none, Some(extra), cfg)?
                }
            };
            Ok(CycleTerms { loss, soft })
        }
    }
}

/// Evaluates the cycle loss with each query's neighbor set reduced to its own
/// second view `k_pp`, next to the intra-video loss evaluated at `k_pp`.
/// The two agree because the soft neighbor of a single-row set is that row.
pub fn degeneracy_probe<T: Scalar>(
    q: &Tensor<T>,
    k_pp: &Tensor<T>,
    k_j: &Tensor<T>,
    negatives: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<(T, T)> {
    let n = q.rows();
    let mut tape = Tape::new();
    let qv = tape.constant(q.clone());
    let u = tape.constant(k_pp.clone());
    let kj = tape.constant(k_j.clone());
    let neg = tape.constant(negatives.clone());
    let mut own = vec![false; n * n];
    for i in 0..n {
        own[i * n + i] = true;
    }
    let soft = soft_nearest_neighbor_masked(&mut tape, qv, u, Some(&own), cfg)?;
    let cycle = cycle_loss(&mut tape, soft.q_hat, kj, neg, cfg)?;
    let intra = intra_video_loss(&mut tape, u, kj, neg, cfg)?;
    Ok((tape.value(cycle).item(), tape.value(intra).item()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    fn eval<F>(f: F) -> f64
    where
        F: FnOnce(&mut Tape<f64>) -> Result<Var>,
    {
        let mut tape = Tape::new();
        let v = f(&mut tape).unwrap();
        tape.value(v).item()
    }

    fn sharp() -> f64 {
        // log(1 + e^{-1/0.07})
        (-1.0f64 / 0.07).exp().ln_1p()
    }

    #[test]
    fn no_negatives_means_zero_loss() {
        let cfg = LossConfig::default();
        let v = eval(|tp| {
            let q = tp.constant(t(1, 2, &[0.6, 0.8]));
            let k = tp.constant(t(1, 2, &[1.0, 0.0]));
            let neg = tp.constant(Tensor::zeros(vec![0, 2]));
            intra_image_loss(tp, q, k, neg, &cfg)
        });
        assert_eq!(v, 0.0);
    }

    #[test]
    fn orthogonal_negative_matches_closed_form() {
        let cfg = LossConfig::default();
        let v = eval(|tp| {
            let q = tp.constant(t(1, 2, &[1.0, 0.0]));
            let neg = tp.constant(t(1, 2, &[0.0, 1.0]));
            intra_image_loss(tp, q, q, neg, &cfg)
        });
        assert!((v - sharp()).abs() < 1e-15);
        assert!((v - 6.2e-7).abs() < 0.05e-7);
    }

    #[test]
    fn non_unit_rows_violate_contract() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let q = tape.constant(t(1, 2, &[1.0, 1.0]));
        let k = tape.constant(t(1, 2, &[1.0, 0.0]));
        let neg = tape.constant(Tensor::zeros(vec![0, 2]));
        assert!(matches!(
            intra_video_loss(&mut tape, q, k, neg, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn single_neighbor_is_returned_verbatim() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let q = tape.constant(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let u = tape.constant(t(1, 2, &[0.6, 0.8]));
        let s = soft_nearest_neighbor(&mut tape, q, u, &cfg).unwrap();
        assert_eq!(tape.value(s.q_hat).data(), &[0.6, 0.8, 0.6, 0.8]);
    }

    #[test]
    fn equal_similarities_average_the_set() {
        let cfg = LossConfig::default();
        let mut tape = Tape::new();
        let q = tape.constant(t(1, 2, &[1.0, 0.0]));
        let u = tape.constant(t(2, 2, &[0.0, 1.0, 0.0, -1.0]));
        let s = soft_nearest_neighbor(&mut tape, q, u, &cfg).unwrap();
        let qh = tape.value(s.q_hat).data();
        assert!(qh[0].abs() < 1e-15 && qh[1].abs() < 1e-15);
    }

    #[test]
    fn sharp_soft_neighbor_weights() {
        let cfg = LossConfig::default();
        let e = (-1.0f64 / 0.07).exp() / (1.0 + (-1.0f64 / 0.07).exp());
        let mut tape = Tape::new();
        let q = tape.constant(t(1, 2, &[1.0, 0.0]));
        let u = tape.constant(t(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        let s = soft_nearest_neighbor(&mut tape, q, u, &cfg).unwrap();
        let a = tape.value(s.alpha).data();
        assert!((a[1] - e).abs() < 1e-15 && (a[0] - (1.0 - e)).abs() < 1e-15);
        let qh = tape.value(s.q_hat).data();
        assert!((qh[0] - 0.9999994).abs() < 1e-7 && (qh[1] - 6.2e-7).abs() < 0.05e-7);
    }

    #[test]
    fn empty_neighbor_set_is_parameter_error() {
        let mut tape = Tape::new();
        let q = tape.constant(t(1, 2, &[1.0, 0.0]));
        let u = tape.constant(Tensor::zeros(vec![0, 2]));
        assert!(matches!(
            soft_nearest_neighbor(&mut tape, q, u, &LossConfig::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn cycle_reduces_to_intra_image_value() {
        let cfg = LossConfig::default();
        let v = eval(|tp| {
            let q = tp.constant(t(1, 2, &[0.6, 0.8]));
            let kj = tp.constant(t(1, 2, &[1.0, 0.0]));
            let s = soft_nearest_neighbor(tp, q, kj, &cfg)?;
            let neg = tp.constant(t(1, 2, &[0.0, 1.0]));
            cycle_loss(tp, s.q_hat, kj, neg, &cfg)
        });
        assert!((v - sharp()).abs() < 1e-15);
    }

    #[test]
    fn combined_weights() {
        let mut cfg = LossConfig::default();
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::scalar(1.0f64));
        let b = tape.constant(Tensor::scalar(1.0));
        let parts = LossParts {
            intra_video: Some(a),
            cycle: Some(b),
            intra_image: None,
        };
        let l = combined_loss(&mut tape, parts, &cfg).unwrap();
        assert!((tape.value(l).item() - 1.1).abs() < 1e-15);
        cfg.lambda = 0.0;
        let x = tape.constant(Tensor::scalar(0.731));
        let parts = LossParts {
            intra_video: Some(x),
            cycle: Some(b),
            intra_image: None,
        };
        let l = combined_loss(&mut tape, parts, &cfg).unwrap();
        assert_eq!(tape.value(l).item(), 0.731);
    }

    #[test]
    fn degeneracy_with_near_duplicate_view() {
        // α(k_pp) for |U| = 2, sim(q, k_pp) = 0.9 and an orthogonal row
        let cfg = LossConfig::default();
        let s: f64 = 0.9;
        let q = t(1, 2, &[1.0, 0.0]);
        let u = t(2, 2, &[s, (1.0 - s * s).sqrt(), 0.0, 1.0]);
        let mut tape = Tape::new();
        let qv = tape.constant(q);
        let uv = tape.constant(u);
        let r = soft_nearest_neighbor(&mut tape, qv, uv, &cfg).unwrap();
        let a = tape.value(r.alpha).data()[0];
        let want = 1.0 / (1.0 + ((0.0 - s) / 0.07).exp());
        assert!((a - want).abs() < 1e-12);
        assert!(a >= 0.999);
    }

    #[test]
    fn config_validation() {
        let mut cfg = LossConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.temperature = 0.0;
        assert!(cfg.validate().is_err());
        cfg = LossConfig { lambda: -0.1, ..LossConfig::default() };
        assert!(cfg.validate().is_err());
    }
}
