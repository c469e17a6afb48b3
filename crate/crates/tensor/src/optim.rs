//! Plain SGD with momentum and decoupled L2 weight decay over named arrays.
//!
//! Parameters live outside any graph; each training step rebuilds a tape with
//! the current values as leaves, takes gradients, and calls [`Sgd::step`].

use crate::{Arr, Scalar};
use std::collections::BTreeMap;

/// SGD state: one velocity buffer per parameter name.
pub struct Sgd<T: Scalar> {
    momentum: T,
    weight_decay: T,
    velocity: BTreeMap<String, Arr<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum: T::from_f64_lossy(momentum),
            weight_decay: T::from_f64_lossy(weight_decay),
            velocity: BTreeMap::new(),
        }
    }

    /// One update: `v = momentum*v + grad + wd*param; param -= lr*v`.
    pub fn step(&mut self, name: &str, param: &mut Arr<T>, grad: &Arr<T>, lr: T) {
        assert_eq!(param.shape(), grad.shape(), "grad shape mismatch: {name}");
        let mut update = grad + &param.mapv(|p| p * self.weight_decay);
        if let Some(v) = self.velocity.get(name) {
            update = &update + &v.mapv(|x| x * self.momentum);
        }
        *param = &*param - &update.mapv(|x| x * lr);
        self.velocity.insert(name.to_string(), update);
    }

    /// Drop all velocity buffers (fresh run).
    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}
