//! Self-ensembling: Gaussian-weighted averaging of per-epoch prompt
//! snapshots.

use crate::state::PromptState;
use crate::MethodError;
use rsprompt_tensor::Scalar;

/// Gaussian weights over epochs `1..=epochs`, normalized to sum 1.
pub fn gaussian_weights(epochs: usize, mean: f64, sigma: f64) -> Vec<f64> {
    assert!(epochs > 0 && sigma > 0.0);
    let raw: Vec<f64> = (1..=epochs)
        .map(|e| {
            let z = (e as f64 - mean) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Weighted average of every learnable tensor across snapshots. Weights are
/// renormalized internally, so the result is invariant to uniform rescaling.
/// Metadata (method, template, seed) is taken from the last snapshot.
pub fn gaussian_prompt_aggregate<T: Scalar>(
    snapshots: &[PromptState<T>],
    weights: &[f64],
) -> Result<PromptState<T>, MethodError> {
    if snapshots.is_empty() {
        return Err(MethodError::EmptySnapshots);
    }
    if snapshots.len() != weights.len() {
        return Err(MethodError::ShapeMismatch(format!(
            "{} snapshots but {} weights",
            snapshots.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(MethodError::InvalidConfig(
            "snapshot weights must sum to a positive finite value".into(),
        ));
    }
    let mut result = snapshots[snapshots.len() - 1].clone();
    let names: Vec<String> = result.named().into_iter().map(|(n, _)| n).collect();

    let mut accum: std::collections::BTreeMap<String, rsprompt_tensor::Arr<T>> =
        std::collections::BTreeMap::new();
    for (snap, &w) in snapshots.iter().zip(weights) {
        let wn = T::from_f64_lossy(w / total);
        let named = snap.named();
        if named.len() != names.len() {
            return Err(MethodError::ShapeMismatch(
                "snapshots carry different tensor sets".into(),
            ));
        }
        for (name, tensor) in named {
            match accum.get_mut(&name) {
                Some(acc) => {
                    if acc.shape() != tensor.shape() {
                        return Err(MethodError::ShapeMismatch(format!(
                            "{name}: {:?} vs {:?}",
                            acc.shape(),
                            tensor.shape()
                        )));
                    }
                    *acc = &*acc + &tensor.mapv(|v| v * wn);
                }
                None => {
                    accum.insert(name, tensor.mapv(|v| v * wn));
                }
            }
        }
    }
    result.assign_named(&accum)?;
    Ok(result)
}
