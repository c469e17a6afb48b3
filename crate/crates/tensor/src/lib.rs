//! Tape-based reverse-mode automatic differentiation over `ndarray`.
//!
//! The engine is intentionally small: it supports exactly the operations a
//! frozen dual-encoder forward pass needs (matrix products, row/column
//! splicing for prompt injection, layer normalization, attention softmax,
//! and the loss heads), with gradients flowing only into designated leaf
//! tensors. Frozen weights enter the graph as constants, so "backbone stays
//! frozen" holds by construction rather than by masking.
//!
//! Values are 2-D matrices or 0-D scalars. Graphs are built per forward pass
//! and dropped afterwards; [`Graph::backward`] runs one reverse sweep and
//! returns gradients for every gradient-tracked leaf.
//!
//! The element type is generic over [`Scalar`] so the same code runs in `f32`
//! for training and `f64` for finite-difference gradient checks.

mod graph;
mod ops;
pub mod optim;

pub use graph::{Graph, VarId};
pub use ops::Op;

use ndarray::ScalarOperand;
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Element types the engine operates on (`f32` and `f64`).
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + ndarray::LinalgScalar
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for hyper-parameters and constants.
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dynamic-dimension array alias used throughout the workspace.
pub type Arr<T> = ndarray::ArrayD<T>;

/// Shorthand for a 2-D array view of an `Arr`.
pub fn as2<T: Scalar>(a: &Arr<T>) -> ndarray::ArrayView2<'_, T> {
    a.view().into_dimensionality().expect("expected 2-D value")
}

/// Build a 2-D `Arr` from a `Vec` in row-major order.
pub fn arr2d<T: Scalar>(rows: usize, cols: usize, data: Vec<T>) -> Arr<T> {
    ndarray::Array2::from_shape_vec((rows, cols), data)
        .expect("shape/data mismatch")
        .into_dyn()
}

/// Build a 0-D scalar `Arr`.
pub fn scalar<T: Scalar>(v: T) -> Arr<T> {
    ndarray::arr0(v).into_dyn()
}
