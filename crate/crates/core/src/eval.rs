//! Frozen-representation evaluation: linear probe and k-NN retrieval.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::data::{frames_matrix, ClassLabels, VideoDataset};
use crate::encoder::Space;
use crate::error::{Error, Result};
use crate::losses::UNIT_TOLERANCE;
use crate::tensor::{kernels, Tensor};

/// Identifies one embedded frame. `source` distinguishes datasets so that
/// frames of different files never count as the same sample. Ordering is
/// the tie-break order used everywhere in this module.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SampleId {
    pub source: u32,
    pub video_id: u32,
    pub frame_idx: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Tensor<f32>,
    pub labels: Vec<usize>,
    pub ids: Vec<SampleId>,
}

impl EmbeddingTable {
    pub fn new(rows: Tensor<f32>, labels: Vec<usize>, ids: Vec<SampleId>) -> Result<Self> {
        if rows.shape().len() != 2 || rows.rows() != labels.len() || labels.len() != ids.len() {
            return Err(Error::Dimension {
                op: "embedding table",
                lhs: rows.shape().to_vec(),
                rhs: vec![labels.len(), ids.len()],
            });
        }
        let dev = rows.max_unit_deviation();
        if dev > UNIT_TOLERANCE {
            return Err(Error::Contract(format!(
                "embedding rows must be unit norm (deviation {dev:e})"
            )));
        }
        Ok(Self { rows, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// Rows whose video id satisfies `keep`.
    pub fn filter_videos(&self, keep: impl Fn(u32) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.ids[i].video_id)).collect();
        Self {
            rows: self.rows.gather_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// One row per `(source, video)`: the renormalized mean of its frames.
    pub fn video_level(&self) -> Result<Self> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.ids[i]);
        let d = self.dim();
        let (mut rows, mut labels, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        let mut start = 0;
        while start < order.len() {
            let head = self.ids[order[start]];
            let mut end = start;
            let mut acc = vec![0.0f64; d];
            while end < order.len()
                && (self.ids[order[end]].source, self.ids[order[end]].video_id)
                    == (head.source, head.video_id)
            {
                for (a, &v) in acc.iter_mut().zip(self.rows.row(order[end])) {
                    *a += v as f64;
                }
                end += 1;
            }
            rows.extend(acc.iter().map(|&a| (a / (end - start) as f64) as f32));
            labels.push(self.labels[order[start]]);
            ids.push(SampleId { frame_idx: 0, ..head });
            start = end;
        }
        let n = labels.len();
        Self::new(Tensor::matrix(n, d, rows)?.l2_normalized()?, labels, ids)
    }
}

/// Embeds every frame of `dataset` without augmentation using the query
/// network of `checkpoint`, l2-normalized, ordered by `(video, frame)`.
pub fn embed_dataset(
    checkpoint: &Checkpoint,
    dataset: &VideoDataset,
    labels: &ClassLabels,
    space: Space,
    source: u32,
) -> Result<EmbeddingTable> {
    let enc = &checkpoint.encoder;
    if (enc.input_height, enc.input_width) != (dataset.height(), dataset.width()) {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{} frames, dataset has {}x{}",
            enc.input_height,
            enc.input_width,
            dataset.height(),
            dataset.width()
        )));
    }
    if labels.0.len() != dataset.num_videos() {
        return Err(Error::Config(format!(
            "{} labels for {} videos",
            labels.0.len(),
            dataset.num_videos()
        )));
    }
    let ids: Vec<(usize, usize)> = (0..dataset.num_videos())
        .flat_map(|v| (0..dataset.frames_per_video()).map(move |f| (v, f)))
        .collect();
    let net = &checkpoint.nets.query;
    let d = net.dim(space);
    let mut rows = Vec::with_capacity(ids.len() * d);
    for chunk in ids.chunks(512) {
        let e = net.embed(&frames_matrix(dataset, chunk), space)?;
        rows.extend_from_slice(e.l2_normalized()?.data());
    }
    EmbeddingTable::new(
        Tensor::matrix(ids.len(), d, rows)?,
        ids.iter().map(|&(v, _)| labels.of(v)).collect(),
        ids.iter()
            .map(|&(v, f)| SampleId {
                source,
                video_id: v as u32,
                frame_idx: f as u32,
            })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 200, lr: 0.1 }
    }
}

/// Affine softmax classifier on frozen embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearClassifier {
    pub num_classes: usize,
    /// `d×C`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearClassifier {
    fn logits(&self, x: &[f32], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (xi, wrow) in x.iter().zip(self.weight.chunks_exact(self.num_classes)) {
            let xi = *xi as f64;
            for (o, &w) in out.iter_mut().zip(wrow) {
                *o += xi * w;
            }
        }
    }

    /// Argmax class; ties go to the lowest class index.
    pub fn predict(&self, x: &[f32]) -> usize {
        let mut z = vec![0.0; self.num_classes];
        self.logits(x, &mut z);
        let mut best = 0;
        for (c, &v) in z.iter().enumerate() {
            if v > z[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, table: &EmbeddingTable) -> f64 {
        if table.is_empty() {
            return 0.0;
        }
        let hits = (0..table.len())
            .filter(|&i| self.predict(table.rows.row(i)) == table.labels[i])
            .count();
        hits as f64 / table.len() as f64
    }
}

/// Multinomial logistic regression from zero initialization by full-batch
/// gradient descent on the mean cross-entropy.
pub fn train_probe(train: &EmbeddingTable, num_classes: usize, cfg: &ProbeConfig) -> Result<LinearClassifier> {
    if train.is_empty() {
        return Err(Error::param("probe training set is empty"));
    }
    if let Some(&bad) = train.labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::param(format!("label {bad} not below {num_classes} classes")));
    }
    let first = train.labels[0];
    if train.labels.iter().all(|&l| l == first) {
        return Err(Error::param("degenerate input: probe training set has a single class"));
    }
    let (n, d, c) = (train.len(), train.dim(), num_classes);
    let mut clf = LinearClassifier {
        num_classes: c,
        weight: vec![0.0; d * c],
        bias: vec![0.0; c],
    };
    let mut z = vec![0.0; c];
    for _ in 0..cfg.epochs {
        let mut gw = vec![0.0; d * c];
        let mut gb = vec![0.0; c];
        for i in 0..n {
            let x = train.rows.row(i);
            clf.logits(x, &mut z);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in z.iter_mut() {
                *v /= sum;
            }
            z[train.labels[i]] -= 1.0;
            for (xi, grow) in x.iter().zip(gw.chunks_exact_mut(c)) {
                let xi = *xi as f64;
                for (g, &p) in grow.iter_mut().zip(&z) {
                    *g += xi * p;
                }
            }
            for (g, &p) in gb.iter_mut().zip(&z) {
                *g += p;
            }
        }
        let step = cfg.lr / n as f64;
        for (w, g) in clf.weight.iter_mut().zip(&gw) {
            *w -= step * g;
        }
        for (b, g) in clf.bias.iter_mut().zip(&gb) {
            *b -= step * g;
        }
    }
    Ok(clf)
}

/// Trains a probe on `train` and returns its top-1 accuracy on `test`.
pub fn linear_probe(train: &EmbeddingTable, test: &EmbeddingTable, cfg: &ProbeConfig) -> Result<f64> {
    if train.dim() != test.dim() {
        return Err(Error::Dimension {
            op: "linear_probe",
            lhs: train.rows.shape().to_vec(),
            rhs: test.rows.shape().to_vec(),
        });
    }
    let num_classes = train.labels.iter().chain(&test.labels).max().map_or(0, |&m| m + 1);
    Ok(train_probe(train, num_classes, cfg)?.accuracy(test))
}

/// `true` when gallery row `a` ranks ahead of row `b` for one query.
fn ahead(sa: f32, ia: SampleId, sb: f32, ib: SampleId) -> bool {
    match sa.total_cmp(&sb) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => ia < ib,
    }
}

/// 1-based position of the first gallery row sharing each query's class in
/// the cosine ranking (ties to the lower sample id, identical sample ids
/// excluded); `None` if the gallery holds no such row.
pub fn first_hit_ranks(query: &EmbeddingTable, gallery: &EmbeddingTable) -> Result<Vec<Option<usize>>> {
    if gallery.is_empty() {
        return Err(Error::param("retrieval gallery is empty"));
    }
    if query.dim() != gallery.dim() {
        return Err(Error::Dimension {
            op: "knn_retrieval",
            lhs: query.rows.shape().to_vec(),
            rhs: gallery.rows.shape().to_vec(),
        });
    }
    let d = query.dim();
    Ok((0..query.len())
        .into_par_iter()
        .map(|qi| {
            let q = query.rows.row(qi);
            let (qid, qlab) = (query.ids[qi], query.labels[qi]);
            let sims: Vec<f32> = (0..gallery.len())
                .map(|g| kernels::dot(q, &gallery.rows.data()[g * d..(g + 1) * d]))
                .collect();
            let candidates = || (0..gallery.len()).filter(|&g| gallery.ids[g] != qid);
            let best = candidates()
                .filter(|&g| gallery.labels[g] == qlab)
                .reduce(|a, b| if ahead(sims[b], gallery.ids[b], sims[a], gallery.ids[a]) { b } else { a })?;
            let above = candidates()
                .filter(|&g| ahead(sims[g], gallery.ids[g], sims[best], gallery.ids[best]))
                .count();
            Some(above + 1)
        })
        .collect())
}

/// Fraction of queries whose class appears among the classes of their `k`
/// nearest gallery rows, for each `k` in `ks`.
pub fn knn_retrieval(query: &EmbeddingTable, gallery: &EmbeddingTable, ks: &[usize]) -> Result<Vec<f64>> {
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > gallery.len()) {
        return Err(Error::param(format!(
            "k = {k} must lie in [1, {}] (gallery size)",
            gallery.len()
        )));
    }
    let ranks = first_hit_ranks(query, gallery)?;
    Ok(hit_rates(&ranks, ks))
}

pub fn hit_rates(ranks: &[Option<usize>], ks: &[usize]) -> Vec<f64> {
    ks.iter()
        .map(|&k| {
            if ranks.is_empty() {
                return 0.0;
            }
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r <= k)).count();
            hits as f64 / ranks.len() as f64
        })
        .collect()
}

/// Deterministic video split: ids `≡ 4 (mod 5)` are held out.
pub fn is_held_out(video_id: u32) -> bool {
    video_id % 5 == 4
}
