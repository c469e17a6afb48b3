//! The operation set recorded on the tape.

use crate::{Arr, VarId};

/// One recorded operation. Parent ids always point at earlier nodes, so the
/// insertion order is already a topological order.
///
/// Frozen parameters (layer-norm gains, attention masks, labels) are stored
/// inside the op payload as plain arrays: they are never differentiated.
pub enum Op<T> {
    /// Gradient-tracked input.
    Leaf,
    /// Non-differentiated input (frozen weights, masks, targets).
    Constant,
    /// Elementwise `a + b`, identical shapes.
    Add(VarId, VarId),
    /// Elementwise `a - b`, identical shapes.
    Sub(VarId, VarId),
    /// Elementwise `a * b`, identical shapes.
    Mul(VarId, VarId),
    /// `a * c` for a fixed scalar `c`.
    Scale(VarId, T),
    /// Matrix product `a (m×k) @ b (k×n)`.
    MatMul(VarId, VarId),
    /// 2-D transpose.
    Transpose(VarId),
    /// `a (m×n) + row (1×n)` broadcast over rows.
    AddRowBroadcast(VarId, VarId),
    /// Row-wise softmax.
    SoftmaxRows(VarId),
    /// Row-wise layer normalization with frozen gain/bias.
    LayerNormRows {
        input: VarId,
        gain: Arr<T>,
        bias: Arr<T>,
        eps: T,
    },
    /// `x * sigmoid(1.702 x)` (the activation used by the reference encoders).
    QuickGelu(VarId),
    /// Elementwise `max(x, 0)`.
    Relu(VarId),
    /// Rows `[r0, r1)` of the input.
    SliceRows(VarId, usize, usize),
    /// Columns `[c0, c1)` of the input.
    SliceCols(VarId, usize, usize),
    /// Vertical concatenation of 2-D parts.
    ConcatRows(Vec<VarId>),
    /// Horizontal concatenation of 2-D parts.
    ConcatCols(Vec<VarId>),
    /// Each row scaled to unit Euclidean norm.
    NormalizeRows(VarId),
    /// Sum of all elements (0-D output).
    SumAll(VarId),
    /// Mean of all elements (0-D output).
    MeanAll(VarId),
    /// Mean multinomial cross-entropy of row logits against integer labels.
    CrossEntropyMean(VarId, Vec<usize>),
    /// Mean over rows of KL(softmax(p_row) || softmax(q_row)).
    KlFromLogitsMean { p: VarId, q: VarId },
    /// Mean absolute difference over all elements.
    L1Mean(VarId, VarId),
}

impl<T> Op<T> {
    /// Parent nodes of this op, in argument order.
    pub fn parents(&self) -> Vec<VarId> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MatMul(a, b)
            | Op::AddRowBroadcast(a, b)
            | Op::KlFromLogitsMean { p: a, q: b }
            | Op::L1Mean(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows { input: a, .. }
            | Op::QuickGelu(a)
            | Op::Relu(a)
            | Op::SliceRows(a, _, _)
            | Op::SliceCols(a, _, _)
            | Op::NormalizeRows(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::CrossEntropyMean(a, _) => vec![*a],
            Op::ConcatRows(parts) | Op::ConcatCols(parts) => parts.clone(),
        }
    }
}
