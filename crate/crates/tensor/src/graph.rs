//! Tape construction and the reverse sweep.

use crate::ops::Op;
use crate::{Arr, Scalar};
use ndarray::{Array2, ArrayView2, Axis};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub(crate) usize);

struct Node<T> {
    value: Arr<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single-use computation tape. Build the forward pass with the methods
/// below, then call [`Graph::backward`] once on a 0-D loss node.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one reverse sweep, indexed by [`VarId`].
pub struct Grads<T> {
    grads: Vec<Option<Arr<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the swept loss w.r.t. `id`, if `id` tracks gradients and
    /// participated in the loss.
    pub fn get(&self, id: VarId) -> Option<&Arr<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn m2<T: Scalar>(a: &Arr<T>) -> ArrayView2<'_, T> {
    a.view().into_dimensionality().expect("expected 2-D value")
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    fn push(&mut self, value: Arr<T>, op: Op<T>) -> VarId {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => other
                .parents()
                .iter()
                .any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    /// Gradient-tracked input tensor.
    pub fn leaf(&mut self, value: Arr<T>) -> VarId {
        self.push(value, Op::Leaf)
    }

    /// Frozen input tensor; no gradient ever flows into it.
    pub fn constant(&mut self, value: Arr<T>) -> VarId {
        self.push(value, Op::Constant)
    }

    /// Value of a node.
    pub fn value(&self, id: VarId) -> &Arr<T> {
        &self.nodes[id.0].value
    }

    /// Whether gradients flow into or through this node.
    pub fn requires_grad(&self, id: VarId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: VarId, c: T) -> VarId {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    /// `a (m×k) @ b (k×n) -> (m×n)`.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = m2(&self.nodes[a.0].value)
            .dot(&m2(&self.nodes[b.0].value))
            .into_dyn();
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: VarId) -> VarId {
        let v = m2(&self.nodes[a.0].value).t().to_owned().into_dyn();
        self.push(v, Op::Transpose(a))
    }

    /// `a (m×n) + row (1×n)`, broadcast over the m rows.
    pub fn add_row_broadcast(&mut self, a: VarId, row: VarId) -> VarId {
        let av = m2(&self.nodes[a.0].value).to_owned();
        let rv = m2(&self.nodes[row.0].value).to_owned();
        assert_eq!(rv.nrows(), 1, "broadcast row must be 1×n");
        let v = (&av + &rv.row(0)).into_dyn();
        self.push(v, Op::AddRowBroadcast(a, row))
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let v = softmax2(&m2(&self.nodes[a.0].value)).into_dyn();
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with frozen `gain`/`bias` (length n each).
    pub fn layer_norm_rows(&mut self, a: VarId, gain: &Arr<T>, bias: &Arr<T>, eps: T) -> VarId {
        let x = m2(&self.nodes[a.0].value);
        let g = gain.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let b = bias.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let n = x.ncols();
        assert_eq!(g.len(), n);
        let mut out = Array2::<T>::zeros((x.nrows(), n));
        let inv_n = T::one() / T::from_usize(n).unwrap();
        for (i, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() * inv_n;
            let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_n;
            let denom = (var + eps).sqrt();
            for j in 0..n {
                out[(i, j)] = (row[j] - mean) / denom * g[j] + b[j];
            }
        }
        self.push(
            out.into_dyn(),
            Op::LayerNormRows {
                input: a,
                gain: gain.clone(),
                bias: bias.clone(),
                eps,
            },
        )
    }

    pub fn quick_gelu(&mut self, a: VarId) -> VarId {
        let c = T::from_f64_lossy(1.702);
        let v = self.nodes[a.0].value.mapv(|x| x * sigmoid(c * x));
        self.push(v, Op::QuickGelu(a))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.nodes[a.0].value.mapv(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a))
    }

    /// Rows `[r0, r1)` of `a`.
    pub fn slice_rows(&mut self, a: VarId, r0: usize, r1: usize) -> VarId {
        let v = m2(&self.nodes[a.0].value)
            .slice(ndarray::s![r0..r1, ..])
            .to_owned()
            .into_dyn();
        self.push(v, Op::SliceRows(a, r0, r1))
    }

    /// Columns `[c0, c1)` of `a`.
    pub fn slice_cols(&mut self, a: VarId, c0: usize, c1: usize) -> VarId {
        let v = m2(&self.nodes[a.0].value)
            .slice(ndarray::s![.., c0..c1])
            .to_owned()
            .into_dyn();
        self.push(v, Op::SliceCols(a, c0, c1))
    }

    pub fn concat_rows(&mut self, parts: &[VarId]) -> VarId {
        let views: Vec<ArrayView2<'_, T>> =
            parts.iter().map(|p| m2(&self.nodes[p.0].value)).collect();
        let v = ndarray::concatenate(Axis(0), &views)
            .expect("row concat shape mismatch")
            .into_dyn();
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        let views: Vec<ArrayView2<'_, T>> =
            parts.iter().map(|p| m2(&self.nodes[p.0].value)).collect();
        let v = ndarray::concatenate(Axis(1), &views)
            .expect("column concat shape mismatch")
            .into_dyn();
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Scale every row of `a` to unit Euclidean norm.
    pub fn normalize_rows(&mut self, a: VarId) -> VarId {
        let x = m2(&self.nodes[a.0].value);
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            let norm = row.fold(T::zero(), |acc, &v| acc + v * v).sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        self.push(out.into_dyn(), Op::NormalizeRows(a))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let v = ndarray::arr0(self.nodes[a.0].value.sum()).into_dyn();
        self.push(v, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let x = &self.nodes[a.0].value;
        let n = T::from_usize(x.len()).unwrap();
        let v = ndarray::arr0(x.sum() / n).into_dyn();
        self.push(v, Op::MeanAll(a))
    }

    /// Mean cross-entropy of `logits` rows against `labels`.
    pub fn cross_entropy_mean(&mut self, logits: VarId, labels: &[usize]) -> VarId {
        let x = m2(&self.nodes[logits.0].value);
        assert_eq!(x.nrows(), labels.len(), "one label per logit row");
        let p = softmax2(&x);
        let inv_b = T::one() / T::from_usize(labels.len()).unwrap();
        let mut loss = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            loss -= p[(i, y)].max(T::min_positive_value()).ln();
        }
        self.push(
            ndarray::arr0(loss * inv_b).into_dyn(),
            Op::CrossEntropyMean(logits, labels.to_vec()),
        )
    }

    /// Mean over rows of KL(softmax(p_row) || softmax(q_row)).
    pub fn kl_from_logits_mean(&mut self, p: VarId, q: VarId) -> VarId {
        let pv = softmax2(&m2(&self.nodes[p.0].value));
        let qv = softmax2(&m2(&self.nodes[q.0].value));
        assert_eq!(pv.dim(), qv.dim());
        let inv_b = T::one() / T::from_usize(pv.nrows()).unwrap();
        let floor = T::min_positive_value();
        let mut total = T::zero();
        for i in 0..pv.nrows() {
            for c in 0..pv.ncols() {
                let pi = pv[(i, c)].max(floor);
                let qi = qv[(i, c)].max(floor);
                total += pi * (pi.ln() - qi.ln());
            }
        }
        self.push(
            ndarray::arr0(total * inv_b).into_dyn(),
            Op::KlFromLogitsMean { p, q },
        )
    }

    /// Mean absolute difference over all elements of `a` and `b`.
    pub fn l1_mean(&mut self, a: VarId, b: VarId) -> VarId {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        assert_eq!(av.shape(), bv.shape());
        let n = T::from_usize(av.len()).unwrap();
        let v = av
            .iter()
            .zip(bv.iter())
            .map(|(&x, &y)| (x - y).abs())
            .sum::<T>()
            / n;
        self.push(ndarray::arr0(v).into_dyn(), Op::L1Mean(a, b))
    }

    /// Reverse sweep from a 0-D `loss` node. Returns per-node gradients.
    pub fn backward(&self, loss: VarId) -> Grads<T> {
        assert_eq!(
            self.nodes[loss.0].value.ndim(),
            0,
            "backward seed must be a 0-D loss"
        );
        let mut grads: Vec<Option<Arr<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(ndarray::arr0(T::one()).into_dyn());

        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[idx].requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.accumulate_parents(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn acc(&self, grads: &mut [Option<Arr<T>>], id: VarId, delta: Arr<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => *existing = &*existing + &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate_parents(&self, idx: usize, g: &Arr<T>, grads: &mut [Option<Arr<T>>]) {
        match &self.nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.mapv(|x| -x));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, g * &self.nodes[b.0].value);
                self.acc(grads, *b, g * &self.nodes[a.0].value);
            }
            Op::Scale(a, c) => {
                self.acc(grads, *a, g.mapv(|x| x * *c));
            }
            Op::MatMul(a, b) => {
                let gv = m2(g);
                let av = m2(&self.nodes[a.0].value);
                let bv = m2(&self.nodes[b.0].value);
                self.acc(grads, *a, gv.dot(&bv.t()).into_dyn());
                self.acc(grads, *b, av.t().dot(&gv).into_dyn());
            }
            Op::Transpose(a) => {
                self.acc(grads, *a, m2(g).t().to_owned().into_dyn());
            }
            Op::AddRowBroadcast(a, row) => {
                self.acc(grads, *a, g.clone());
                let summed = m2(g).sum_axis(Axis(0)).insert_axis(Axis(0));
                self.acc(grads, *row, summed.into_dyn());
            }
            Op::SoftmaxRows(a) => {
                let y = m2(&self.nodes[idx].value);
                let gv = m2(g);
                let mut out = Array2::<T>::zeros(y.dim());
                for i in 0..y.nrows() {
                    let dot = (0..y.ncols()).fold(T::zero(), |acc, c| acc + gv[(i, c)] * y[(i, c)]);
                    for c in 0..y.ncols() {
                        out[(i, c)] = y[(i, c)] * (gv[(i, c)] - dot);
                    }
                }
                self.acc(grads, *a, out.into_dyn());
            }
            Op::LayerNormRows {
                input, gain, eps, ..
            } => {
                let x = m2(&self.nodes[input.0].value);
                let gv = m2(g);
                let gain1 = gain.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let n = x.ncols();
                let inv_n = T::one() / T::from_usize(n).unwrap();
                let mut out = Array2::<T>::zeros(x.dim());
                for i in 0..x.nrows() {
                    let row = x.row(i);
                    let mean = row.sum() * inv_n;
                    let var =
                        row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_n;
                    let denom = (var + *eps).sqrt();
                    // dy-hat, plus the row statistics of the incoming grads
                    let mut sum_dy = T::zero();
                    let mut sum_dy_xhat = T::zero();
                    let mut dy = vec![T::zero(); n];
                    let mut xhat = vec![T::zero(); n];
                    for j in 0..n {
                        xhat[j] = (row[j] - mean) / denom;
                        dy[j] = gv[(i, j)] * gain1[j];
                        sum_dy += dy[j];
                        sum_dy_xhat += dy[j] * xhat[j];
                    }
                    for j in 0..n {
                        out[(i, j)] =
                            (dy[j] - sum_dy * inv_n - xhat[j] * sum_dy_xhat * inv_n) / denom;
                    }
                }
                self.acc(grads, *input, out.into_dyn());
            }
            Op::QuickGelu(a) => {
                let c = T::from_f64_lossy(1.702);
                let x = &self.nodes[a.0].value;
                let d = x.mapv(|v| {
                    let s = sigmoid(c * v);
                    s + c * v * s * (T::one() - s)
                });
                self.acc(grads, *a, g * &d);
            }
            Op::Relu(a) => {
                let x = &self.nodes[a.0].value;
                let mask = x.mapv(|v| if v > T::zero() { T::one() } else { T::zero() });
                self.acc(grads, *a, g * &mask);
            }
            Op::SliceRows(a, r0, _) => {
                let src = m2(&self.nodes[a.0].value);
                let gv = m2(g);
                let mut out = Array2::<T>::zeros(src.dim());
                out.slice_mut(ndarray::s![*r0..*r0 + gv.nrows(), ..])
                    .assign(&gv);
                self.acc(grads, *a, out.into_dyn());
            }
            Op::SliceCols(a, c0, _) => {
                let src = m2(&self.nodes[a.0].value);
                let gv = m2(g);
                let mut out = Array2::<T>::zeros(src.dim());
                out.slice_mut(ndarray::s![.., *c0..*c0 + gv.ncols()])
                    .assign(&gv);
                self.acc(grads, *a, out.into_dyn());
            }
            Op::ConcatRows(parts) => {
                let gv = m2(g);
                let mut offset = 0;
                for p in parts {
                    let rows = m2(&self.nodes[p.0].value).nrows();
                    let piece = gv
                        .slice(ndarray::s![offset..offset + rows, ..])
                        .to_owned()
                        .into_dyn();
                    self.acc(grads, *p, piece);
                    offset += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let gv = m2(g);
                let mut offset = 0;
                for p in parts {
                    let cols = m2(&self.nodes[p.0].value).ncols();
                    let piece = gv
                        .slice(ndarray::s![.., offset..offset + cols])
                        .to_owned()
                        .into_dyn();
                    self.acc(grads, *p, piece);
                    offset += cols;
                }
            }
            Op::NormalizeRows(a) => {
                let x = m2(&self.nodes[a.0].value);
                let y = m2(&self.nodes[idx].value);
                let gv = m2(g);
                let mut out = Array2::<T>::zeros(x.dim());
                for i in 0..x.nrows() {
                    let norm = x.row(i).fold(T::zero(), |acc, &v| acc + v * v).sqrt();
                    let dot = (0..x.ncols())
                        .fold(T::zero(), |acc, c| acc + gv[(i, c)] * y[(i, c)]);
                    for c in 0..x.ncols() {
                        out[(i, c)] = (gv[(i, c)] - y[(i, c)] * dot) / norm;
                    }
                }
                self.acc(grads, *a, out.into_dyn());
            }
            Op::SumAll(a) => {
                let seed = g.first().copied().unwrap_or_else(T::one);
                let shape = self.nodes[a.0].value.raw_dim();
                self.acc(grads, *a, Arr::from_elem(shape, seed));
            }
            Op::MeanAll(a) => {
                let seed = g.first().copied().unwrap_or_else(T::one);
                let n = T::from_usize(self.nodes[a.0].value.len()).unwrap();
                let shape = self.nodes[a.0].value.raw_dim();
                self.acc(grads, *a, Arr::from_elem(shape, seed / n));
            }
            Op::CrossEntropyMean(logits, labels) => {
                let seed = g.first().copied().unwrap_or_else(T::one);
                let x = m2(&self.nodes[logits.0].value);
                let mut p = softmax2(&x);
                let inv_b = T::one() / T::from_usize(labels.len()).unwrap();
                for (i, &y) in labels.iter().enumerate() {
                    p[(i, y)] -= T::one();
                }
                p.mapv_inplace(|v| v * inv_b * seed);
                self.acc(grads, *logits, p.into_dyn());
            }
            Op::KlFromLogitsMean { p, q } => {
                let seed = g.first().copied().unwrap_or_else(T::one);
                let pv = softmax2(&m2(&self.nodes[p.0].value));
                let qv = softmax2(&m2(&self.nodes[q.0].value));
                let inv_b = T::one() / T::from_usize(pv.nrows()).unwrap();
                let floor = T::min_positive_value();
                if self.nodes[p.0].requires_grad {
                    let mut out = Array2::<T>::zeros(pv.dim());
                    for i in 0..pv.nrows() {
                        let mut kl_i = T::zero();
                        for c in 0..pv.ncols() {
                            let pi = pv[(i, c)].max(floor);
                            let qi = qv[(i, c)].max(floor);
                            kl_i += pi * (pi.ln() - qi.ln());
                        }
                        for c in 0..pv.ncols() {
                            let pi = pv[(i, c)].max(floor);
                            let qi = qv[(i, c)].max(floor);
                            out[(i, c)] = pi * ((pi.ln() - qi.ln()) - kl_i) * inv_b * seed;
                        }
                    }
                    self.acc(grads, *p, out.into_dyn());
                }
                if self.nodes[q.0].requires_grad {
                    let out = (&qv - &pv).mapv(|v| v * inv_b * seed);
                    self.acc(grads, *q, out.into_dyn());
                }
            }
            Op::L1Mean(a, b) => {
                let seed = g.first().copied().unwrap_or_else(T::one);
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let n = T::from_usize(av.len()).unwrap();
                let diff = av
                    .iter()
                    .zip(bv.iter())
                    .map(|(&x, &y)| {
                        if x > y {
                            T::one()
                        } else if x < y {
                            -T::one()
                        } else {
                            T::zero()
                        }
                    })
                    .collect::<Vec<_>>();
                let sign = Arr::from_shape_vec(av.raw_dim(), diff).unwrap();
                self.acc(grads, *a, sign.mapv(|v| v * seed / n));
                self.acc(grads, *b, sign.mapv(|v| -v * seed / n));
            }
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Numerically stable row-wise softmax.
fn softmax2<T: Scalar>(x: &ArrayView2<'_, T>) -> Array2<T> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(T::neg_infinity(), |acc, &v| acc.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}
