//! Fixed-capacity FIFO memory bank of key embeddings tagged with video ids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tolerance on the unit-norm precondition of enqueued rows.
const UNIT_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct QueueState {
    capacity: usize,
    dim: usize,
    buffer: Vec<f32>,
    video_ids: Vec<u32>,
    write_ptr: usize,
    fill: usize,
}

/// Neighbor set `U` and the remaining unmasked slots for one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSplit {
    pub u: Tensor<f32>,
    pub u_indices: Vec<usize>,
    pub remainder: Tensor<f32>,
    pub remainder_indices: Vec<usize>,
    /// Filled slots excluded because they carry a video id of the query batch.
    pub masked: usize,
    /// Per query row (`n×|U|`, row-major), whether a row of `U` stays in that
    /// query's neighbor set. `None` means every row is kept for every query.
    /// Dropped rows act as extra negatives for that query.
    pub keep: Option<Vec<bool>>,
}

impl NeighborSplit {
    pub fn len_u(&self) -> usize {
        self.u_indices.len()
    }
}

/// Result of asking the queue for a neighbor split.
#[derive(Clone, Debug, PartialEq)]
pub enum NeighborSample {
    Ready(NeighborSplit),
    /// Not enough unmasked slots yet; the caller skips the cycle term.
    Warmup { unmasked: usize, required: usize },
}

impl QueueState {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::param(format!(
                "queue needs positive capacity and dim, got {capacity}x{dim}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            buffer: vec![0.0; capacity * dim],
            video_ids: vec![0; capacity],
            write_ptr: 0,
            fill: 0,
        })
    }

    /// Reassembles a queue from serialized parts, validating every invariant.
    pub fn from_parts(
        capacity: usize,
        dim: usize,
        buffer: Vec<f32>,
        video_ids: Vec<u32>,
        write_ptr: usize,
        fill: usize,
    ) -> Result<Self> {
        if capacity == 0
            || dim == 0
            || buffer.len() != capacity * dim
            || video_ids.len() != capacity
            || write_ptr >= capacity
            || fill > capacity
            || (fill < capacity && write_ptr != fill)
        {
            return Err(Error::Config(format!(
                "inconsistent queue state: capacity {capacity}, dim {dim}, write_ptr {write_ptr}, fill {fill}"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            buffer,
            video_ids,
            write_ptr,
            fill,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn write_ptr(&self) -> usize {
        self.write_ptr
    }

    pub fn raw_buffer(&self) -> &[f32] {
        &self.buffer
    }

    pub fn raw_video_ids(&self) -> &[u32] {
        &self.video_ids
    }

    pub fn row(&self, slot: usize) -> &[f32] {
        &self.buffer[slot * self.dim..(slot + 1) * self.dim]
    }

    pub fn video_id(&self, slot: usize) -> u32 {
        self.video_ids[slot]
    }

    /// Filled slot ids from oldest to newest.
    pub fn slots_oldest_first(&self) -> impl Iterator<Item = usize> + '_ {
        let start = if self.fill < self.capacity { 0 } else { self.write_ptr };
        (0..self.fill).map(move |i| (start + i) % self.capacity)
    }

    /// Writes `keys` at the write pointer, overwriting the oldest entries once
    /// the queue is full.
    pub fn enqueue_dequeue(&mut self, keys: &Tensor<f32>, vids: &[u32]) -> Result<()> {
        let n = keys.rows();
        if keys.numel() == 0 && vids.is_empty() {
            return Ok(());
        }
        if n > self.capacity {
            return Err(Error::Capacity {
                requested: n,
                capacity: self.capacity,
            });
        }
        if keys.shape().len() != 2 || keys.cols() != self.dim || vids.len() != n {
            return Err(Error::Dimension {
                op: "enqueue",
                lhs: keys.shape().to_vec(),
                rhs: vec![vids.len(), self.dim],
            });
        }
        if let Some((row, norm)) = keys
            .row_norms()
            .into_iter()
            .enumerate()
            .find(|(_, nrm)| (*nrm as f64 - 1.0).abs() > UNIT_TOL)
        {
            return Err(Error::Contract(format!(
                "enqueued key row {row} has norm {norm}, expected 1"
            )));
        }
        for (i, &vid) in vids.iter().enumerate() {
            let slot = self.write_ptr;
            self.buffer[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(keys.row(i));
            self.video_ids[slot] = vid;
            self.write_ptr = (self.write_ptr + 1) % self.capacity;
        }
        self.fill = (self.fill + n).min(self.capacity);
        Ok(())
    }

    /// Filled slots (in slot order) whose video id is not in `exclude`.
    pub fn unmasked_slots(&self, exclude: &[u32]) -> Vec<usize> {
        let mut excl = exclude.to_vec();
        excl.sort_unstable();
        (0..self.fill)
            .filter(|&s| excl.binary_search(&self.video_ids[s]).is_err())
            .collect()
    }

    /// Stacks the given slots into a matrix.
    pub fn gather(&self, slots: &[usize]) -> Tensor<f32> {
        let mut data = Vec::with_capacity(slots.len() * self.dim);
        for &s in slots {
            data.extend_from_slice(self.row(s));
        }
        Tensor::matrix(slots.len(), self.dim, data).unwrap()
    }

    /// Draws `m_nb` neighbor slots uniformly without replacement from the
    /// slots not carrying any of `query_vids`; the rest become the remainder.
    pub fn sample_neighbor_split(
        &self,
        m_nb: usize,
        query_vids: &[u32],
        seed: u64,
    ) -> Result<NeighborSample> {
        if m_nb == 0 {
            return Err(Error::param("neighbor set size must be positive"));
        }
        let unmasked = self.unmasked_slots(query_vids);
        if unmasked.len() < m_nb + 1 {
            return Ok(NeighborSample::Warmup {
                unmasked: unmasked.len(),
                required: m_nb + 1,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, unmasked.len(), m_nb)
            .into_iter()
            .collect();
        picked.sort_unstable();
        let mut in_u = vec![false; unmasked.len()];
        for &p in &picked {
            in_u[p] = true;
        }
        let u_indices: Vec<usize> = picked.iter().map(|&p| unmasked[p]).collect();
        let remainder_indices: Vec<usize> = unmasked
            .iter()
            .zip(&in_u)
            .filter(|(_, &u)| !u)
            .map(|(&s, _)| s)
            .collect();
        Ok(NeighborSample::Ready(NeighborSplit {
            u: self.gather(&u_indices),
            remainder: self.gather(&remainder_indices),
            masked: self.fill - unmasked.len(),
            u_indices,
            remainder_indices,
            keep: None,
        }))
    }
}

/// Restricts each query's neighbor set to its `k_top` most similar rows of
/// `U` (cosine similarity, ties to the lower slot id). Dropped rows remain
/// negatives for that query.
pub fn top_k_filter(q_cycle: &Tensor<f32>, split: NeighborSplit, k_top: usize) -> Result<NeighborSplit> {
    let m = split.len_u();
    if k_top == 0 {
        return Err(Error::param("top_k must be positive"));
    }
    if k_top > m {
        return Err(Error::param(format!(
            "top_k {k_top} exceeds neighbor set size {m}"
        )));
    }
    if k_top == m {
        return Ok(split);
    }
    if q_cycle.shape().len() != 2 || q_cycle.cols() != split.u.cols() {
        return Err(Error::Dimension {
            op: "top_k_filter",
            lhs: q_cycle.shape().to_vec(),
            rhs: split.u.shape().to_vec(),
        });
    }
    let n = q_cycle.rows();
    let sims = q_cycle.matmul_t(&split.u)?;
    let q_norms = q_cycle.row_norms();
    let u_norms = split.u.row_norms();
    let mut keep = vec![false; n * m];
    let mut order: Vec<usize> = Vec::with_capacity(m);
    for i in 0..n {
        let cos = |j: usize| sims.row(i)[j] / (q_norms[i] * u_norms[j]);
        order.clear();
        order.extend(
            (0..m).filter(|&j| split.keep.as_ref().map_or(true, |k| k[i * m + j])),
        );
        order.sort_by(|&a, &b| {
            cos(b)
                .total_cmp(&cos(a))
                .then(split.u_indices[a].cmp(&split.u_indices[b]))
        });
        for &j in order.iter().take(k_top) {
            keep[i * m + j] = true;
        }
    }
    Ok(NeighborSplit {
        keep: Some(keep),
        ..split
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn unit_rows(vals: &[f32], dim: usize) -> Tensor<f32> {
        let mut data = Vec::new();
        for &v in vals {
            let mut row = vec![0.0; dim];
            row[(v as usize) % dim] = 1.0;
            data.extend(row);
        }
        Tensor::matrix(vals.len(), dim, data).unwrap()
    }

    fn contents(q: &QueueState) -> Vec<u32> {
        q.slots_oldest_first().map(|s| q.video_id(s)).collect()
    }

    #[test]
    fn fifo_eviction_order() {
        let mut q = QueueState::new(4, 3).unwrap();
        q.enqueue_dequeue(&unit_rows(&[0.0, 1.0], 3), &[10, 11]).unwrap();
        q.enqueue_dequeue(&unit_rows(&[2.0, 0.0], 3), &[12, 13]).unwrap();
        q.enqueue_dequeue(&unit_rows(&[1.0, 2.0], 3), &[14, 15]).unwrap();
        assert_eq!(contents(&q), vec![12, 13, 14, 15]);
        assert_eq!(q.fill(), 4);
    }

    #[test]
    fn empty_enqueue_is_identity() {
        let mut q = QueueState::new(4, 3).unwrap();
        q.enqueue_dequeue(&unit_rows(&[0.0], 3), &[1]).unwrap();
        let before = q.clone();
        q.enqueue_dequeue(&Tensor::zeros(vec![0, 3]), &[]).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn over_capacity_and_non_unit_rows_rejected() {
        let mut q = QueueState::new(2, 3).unwrap();
        assert!(matches!(
            q.enqueue_dequeue(&unit_rows(&[0.0, 1.0, 2.0], 3), &[1, 2, 3]),
            Err(Error::Capacity { requested: 3, capacity: 2 })
        ));
        let bad = Tensor::matrix(1, 3, vec![1.0, 1.0, 0.0]).unwrap();
        assert!(matches!(q.enqueue_dequeue(&bad, &[1]), Err(Error::Contract(_))));
    }

    #[test]
    fn random_ops_match_reference_ring() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cap = 13;
        let mut q = QueueState::new(cap, 4).unwrap();
        let mut reference: VecDeque<u32> = VecDeque::new();
        let mut next = 0u32;
        for _ in 0..1000 {
            let n = rng.gen_range(0..=cap);
            let vids: Vec<u32> = (0..n as u32).map(|i| next + i).collect();
            next += n as u32;
            let rows: Vec<f32> = vids.iter().map(|&v| v as f32).collect();
            q.enqueue_dequeue(&unit_rows(&rows, 4), &vids).unwrap();
            for v in vids {
                if reference.len() == cap {
                    reference.pop_front();
                }
                reference.push_back(v);
            }
            assert_eq!(contents(&q), reference.iter().copied().collect::<Vec<_>>());
        }
    }

    fn filled(n: usize, vid_of: impl Fn(usize) -> u32) -> QueueState {
        let mut q = QueueState::new(n, 4).unwrap();
        let rows: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let vids: Vec<u32> = (0..n).map(vid_of).collect();
        q.enqueue_dequeue(&unit_rows(&rows, 4), &vids).unwrap();
        q
    }

    #[test]
    fn split_partitions_unmasked_slots() {
        let q = filled(20, |i| (i % 7) as u32);
        let NeighborSample::Ready(s) = q.sample_neighbor_split(5, &[3], 11).unwrap() else {
            panic!("expected a split")
        };
        assert_eq!(s.len_u(), 5);
        assert_eq!(s.u_indices.len() + s.remainder_indices.len() + s.masked, 20);
        for &i in s.u_indices.iter().chain(&s.remainder_indices) {
            assert_ne!(q.video_id(i), 3);
        }
        assert!(s.u_indices.iter().all(|i| !s.remainder_indices.contains(i)));
    }

    #[test]
    fn maximal_neighbor_set_leaves_one_remainder_row() {
        let q = filled(10, |i| i as u32);
        let NeighborSample::Ready(s) = q.sample_neighbor_split(8, &[0], 1).unwrap() else {
            panic!("expected a split")
        };
        assert_eq!(s.remainder.rows(), 1);
        assert_eq!(
            q.sample_neighbor_split(9, &[0], 1).unwrap(),
            NeighborSample::Warmup { unmasked: 9, required: 10 }
        );
    }

    fn two_row_split() -> NeighborSplit {
        NeighborSplit {
            u: Tensor::matrix(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            u_indices: vec![0, 1],
            remainder: Tensor::zeros(vec![0, 2]),
            remainder_indices: vec![],
            masked: 0,
            keep: None,
        }
    }

    #[test]
    fn top_k_full_is_identity_and_forced_order() {
        let query = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let s = two_row_split();
        assert_eq!(top_k_filter(&query, s.clone(), 2).unwrap(), s);
        let f = top_k_filter(&query, s, 1).unwrap();
        assert_eq!(f.keep, Some(vec![false, true]));
    }

    #[test]
    fn top_k_rejects_bad_k() {
        let s = two_row_split();
        let query = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(top_k_filter(&query, s.clone(), 0).is_err());
        assert!(top_k_filter(&query, s, 3).is_err());
    }
}
