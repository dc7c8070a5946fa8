use super::kernels::{matmul_nn, matmul_nt, matmul_tn};
use super::{Scalar, Tensor, NORM_EPS};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRowBias(Var, Var),
    Relu(Var),
    L2Normalize { x: Var, norms: Vec<T> },
    SoftmaxRows { x: Var, tau: T },
    MaskFill { x: Var, keep: Vec<bool> },
    CrossEntropy { logits: Var, targets: Vec<usize>, tau: T, probs: Vec<T> },
    RowDot(Var, Var),
    ConcatCols(Vec<Var>),
    Scale(Var, T),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of the forward pass. Backward replays it in reverse.
///
/// A tape lives for one optimization step; call [`Tape::clear`] or drop it
/// before the next one.
#[derive(Debug, Default)]
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`, used for similarity matrices between row sets.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMulT(a, b), rg))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        if xv.shape().len() != 2 || bv.numel() != xv.cols() {
            return Err(Error::Dimension {
                op: "add_row_bias",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = xv.clone();
        let b = bv.data().to_vec();
        for i in 0..out.rows() {
            for (o, &bj) in out.row_mut(i).iter_mut().zip(&b) {
                *o = *o + bj;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(out, Op::AddRowBias(x, bias), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let norms = xv.row_norms();
        if let Some(row) = norms.iter().position(|n| !n.is_finite()) {
            return Err(Error::Numeric(format!(
                "l2_normalize: row {row} has non-finite norm"
            )));
        }
        if let Some((row, n)) = norms.iter().enumerate().find(|(_, n)| n.as_f64() <= NORM_EPS) {
            return Err(Error::Degenerate {
                op: "l2_normalize",
                row,
                norm: n.as_f64(),
            });
        }
        let mut out = xv.clone();
        for (i, &n) in norms.iter().enumerate() {
            for v in out.row_mut(i) {
                *v = *v / n;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::L2Normalize { x, norms }, rg))
    }

    /// Row-wise `softmax(x / tau)` with max subtraction.
    pub fn softmax_rows(&mut self, x: Var, tau: T) -> Result<Var> {
        check_tau(tau)?;
        let mut out = self.value(x).clone();
        for i in 0..out.rows() {
            softmax_in_place(out.row_mut(i), tau);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SoftmaxRows { x, tau }, rg))
    }

    /// Replaces entries whose `keep` flag is false with negative infinity, so
    /// they drop out of a following softmax or cross-entropy.
    pub fn mask_fill(&mut self, x: Var, keep: Vec<bool>) -> Result<Var> {
        let xv = self.value(x);
        if keep.len() != xv.numel() {
            return Err(Error::Dimension {
                op: "mask_fill",
                lhs: xv.shape().to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let mut out = xv.clone();
        for (v, &k) in out.data_mut().iter_mut().zip(&keep) {
            if !k {
                *v = T::neg_infinity();
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaskFill { x, keep }, rg))
    }

    /// Mean over rows of `-log softmax(logits / tau)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], tau: T) -> Result<Var> {
        check_tau(tau)?;
        let lv = self.value(logits);
        if lv.shape().len() != 2 || targets.len() != lv.rows() {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (n, c) = (lv.rows(), lv.cols());
        if let Some(&t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Index {
                op: "cross_entropy",
                index: t,
                bound: c,
            });
        }
        let mut probs = lv.data().to_vec();
        let mut total = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = &mut probs[i * c..(i + 1) * c];
            let lse = log_sum_exp(row, tau);
            total = total + (lse - row[t] / tau);
            softmax_in_place(row, tau);
        }
        let loss = if n == 0 {
            T::zero()
        } else {
            total / T::from_usize(n).unwrap()
        };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                tau,
                probs,
            },
            rg,
        ))
    }

    /// Per-row dot products, shape `n×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() || av.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "row_dot",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = (0..av.rows())
            .map(|i| super::kernels::dot(av.row(i), bv.row(i)))
            .collect();
        let out = Tensor::matrix(av.rows(), 1, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::RowDot(a, b), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            if pv.shape().len() != 2 || pv.rows() != n {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: pv.shape().to_vec(),
                });
            }
            widths.push(pv.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = Tensor::matrix(n, total, data)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = *v * c;
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_values("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    fn zip_values(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Dimension {
                op,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Reverse pass from a scalar output. Every leaf created with
    /// `requires_grad` receives a gradient, zero-filled if unreachable.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out_val = self.value(output);
        if out_val.numel() != 1 {
            return Err(Error::Dimension {
                op: "backward",
                lhs: out_val.shape().to_vec(),
                rhs: vec![],
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![T::one()]);

        for id in (0..=output.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (g, &node.op) {
                (Some(g), _) => Some(Tensor::new(node.value.shape().to_vec(), g).unwrap()),
                (None, Op::Leaf) if node.requires_grad => {
                    Some(Tensor::zeros(node.value.shape().to_vec()))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, p) = (av.rows(), av.cols(), bv.cols());
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); n * k];
                    matmul_nt(g, bv.data(), &mut da, n, p, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); k * p];
                    matmul_tn(av.data(), g, &mut db, n, k, p);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, p) = (av.rows(), av.cols(), bv.rows());
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); n * k];
                    matmul_nn(g, bv.data(), &mut da, n, p, k);
                    self.accumulate(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); p * k];
                    matmul_tn(g, av.data(), &mut db, n, p, k);
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::AddRowBias(x, b) => {
                if self.requires_grad(*x) {
                    self.accumulate(grads, *x, g);
                }
                if self.requires_grad(*b) {
                    let p = val(*b).numel();
                    let mut db = vec![T::zero(); p];
                    for row in g.chunks(p.max(1)) {
                        for (d, &r) in db.iter_mut().zip(row) {
                            *d = *d + r;
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Relu(x) => {
                let dx: Vec<T> = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gi)| if y > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::L2Normalize { x, norms } => {
                let y = &node.value;
                let d = y.cols();
                let mut dx = vec![T::zero(); g.len()];
                for (i, &norm) in norms.iter().enumerate() {
                    let yr = y.row(i);
                    let gr = &g[i * d..(i + 1) * d];
                    let proj = super::kernels::dot(yr, gr);
                    for j in 0..d {
                        dx[i * d + j] = (gr[j] - yr[j] * proj) / norm;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::SoftmaxRows { x, tau } => {
                let y = &node.value;
                let m = y.cols();
                let mut dx = vec![T::zero(); g.len()];
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = &g[i * m..(i + 1) * m];
                    let inner = super::kernels::dot(yr, gr);
                    for j in 0..m {
                        dx[i * m + j] = yr[j] * (gr[j] - inner) / *tau;
                    }
                }
                self.accumulate(grads, *x, &dx);
            }
            Op::MaskFill { x, keep } => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(keep)
                    .map(|(&gi, &k)| if k { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::CrossEntropy {
                logits,
                targets,
                tau,
                probs,
            } => {
                let n = targets.len();
                if n == 0 {
                    return;
                }
                let c = probs.len() / n;
                let coef = g[0] / (*tau * T::from_usize(n).unwrap());
                let mut dx: Vec<T> = probs.iter().map(|&p| p * coef).collect();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * c + t] = dx[i * c + t] - coef;
                }
                self.accumulate(grads, *logits, &dx);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let d = av.cols();
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); av.numel()];
                    for (i, &gi) in g.iter().enumerate() {
                        for (o, &bj) in da[i * d..(i + 1) * d].iter_mut().zip(bv.row(i)) {
                            *o = gi * bj;
                        }
                    }
                    self.accumulate(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    for (i, &gi) in g.iter().enumerate() {
                        for (o, &aj) in db[i * d..(i + 1) * d].iter_mut().zip(av.row(i)) {
                            *o = gi * aj;
                        }
                    }
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::ConcatCols(parts) => {
                let n = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.requires_grad(p) {
                        let mut dp = Vec::with_capacity(n * w);
                        for i in 0..n {
                            dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                        }
                        self.accumulate(grads, p, &dp);
                    }
                    offset += w;
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<T> = g.iter().map(|&gi| gi * *c).collect();
                self.accumulate(grads, *x, &dx);
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.requires_grad(v) {
                        self.accumulate(grads, v, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.requires_grad(*a) {
                    let da: Vec<T> = g.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, &da);
                }
                if self.requires_grad(*b) {
                    let db: Vec<T> = g.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, &db);
                }
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; val(*x).numel()];
                self.accumulate(grads, *x, &dx);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, contrib: &[T]) {
        if !self.requires_grad(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, &c) in acc.iter_mut().zip(contrib) {
                    *a = *a + c;
                }
            }
            slot @ None => *slot = Some(contrib.to_vec()),
        }
    }
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::param(format!(
            "temperature must be positive, got {}",
            tau.as_f64()
        )));
    }
    Ok(())
}

fn log_sum_exp<T: Scalar>(row: &[T], tau: T) -> T {
    let max = row
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m })
        / tau;
    let s: T = row.iter().map(|&v| (v / tau - max).exp()).sum();
    max + s.ln()
}

fn softmax_in_place<T: Scalar>(row: &mut [T], tau: T) {
    let max = row
        .iter()
        .fold(T::neg_infinity(), |m, &v| if v > m { v } else { m })
        / tau;
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v / tau - max).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}
