//! Top-1 accuracy, confusion matrices, and multi-seed aggregation.

use crate::EvalError;
use ndarray::{Array2, ArrayView2};
use rsprompt_tensor::Scalar;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Row-normalized confusion matrix with raw counts retained.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ConfusionMatrix {
    /// (true, predicted) raw counts.
    pub counts: Vec<Vec<u64>>,
    /// Rows normalized by true-class totals; all-zero rows stay zero.
    pub normalized: Vec<Vec<f64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    /// Per-class accuracy = the diagonal of the normalized matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.normalized.len())
            .map(|i| self.normalized[i][i])
            .collect()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Overall accuracy implied by the counts.
    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        let total: u64 = self.counts.iter().flatten().sum();
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax_row<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0usize;
    let mut best_v = T::neg_infinity();
    let mut tied = false;
    for (c, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = c;
            tied = false;
        } else if v == best_v {
            tied = true;
        }
    }
    if tied {
        log::debug!("argmax tie at class {best}; lowest index wins");
    }
    best
}

/// Predicted class per logit row.
pub fn predictions_from_logits<T: Scalar>(logits: &ArrayView2<'_, T>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| argmax_row(r.as_slice().unwrap_or(&r.to_vec())))
        .collect()
}

/// Fraction of rows whose argmax matches the label.
pub fn top1<T: Scalar>(logits: &ArrayView2<'_, T>, labels: &[usize]) -> Result<f64, EvalError> {
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if logits.nrows() != labels.len() {
        return Err(EvalError::LengthMismatch(logits.nrows(), labels.len()));
    }
    let preds = predictions_from_logits(logits);
    let correct = preds
        .iter()
        .zip(labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Tally a confusion matrix from predicted classes.
pub fn confusion(
    predictions: &[usize],
    labels: &[usize],
    class_names: &[String],
) -> Result<ConfusionMatrix, EvalError> {
    let c = class_names.len();
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch(predictions.len(), labels.len()));
    }
    if let Some(&bad) = labels.iter().chain(predictions.iter()).find(|&&l| l >= c) {
        return Err(EvalError::LabelRange {
            label: bad,
            classes: c,
        });
    }
    let mut counts = vec![vec![0u64; c]; c];
    for (&p, &t) in predictions.iter().zip(labels.iter()) {
        counts[t][p] += 1;
    }
    let normalized = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![0.0; c]
            } else {
                row.iter().map(|&v| v as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(ConfusionMatrix {
        counts,
        normalized,
        class_names: class_names.to_vec(),
    })
}

/// Everything an emitted report carries for provenance.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub backbone_digest: String,
    pub split_digests: BTreeMap<String, String>,
    pub manifest_digests: Vec<String>,
    pub checkpoint_ids: Vec<String>,
}

/// Per-(dataset, method, shots) evaluation result, possibly multi-seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: String,
    /// Absent for the zero-shot baseline.
    pub shots: Option<usize>,
    pub seeds: Vec<u64>,
    pub per_seed_accuracy: Vec<f64>,
    pub mean_accuracy: f64,
    pub per_class_accuracy: Vec<f64>,
    pub confusion: ConfusionMatrix,
    pub provenance: Provenance,
}

impl EvalReport {
    /// Single-seed report from predictions.
    pub fn single(
        dataset: &str,
        method: &str,
        shots: Option<usize>,
        seed: u64,
        predictions: &[usize],
        labels: &[usize],
        class_names: &[String],
        provenance: Provenance,
    ) -> Result<Self, EvalError> {
        if predictions.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        let cm = confusion(predictions, labels, class_names)?;
        let correct = predictions
            .iter()
            .zip(labels.iter())
            .filter(|(p, l)| p == l)
            .count();
        let acc = correct as f64 / labels.len() as f64;
        Ok(EvalReport {
            dataset: dataset.to_string(),
            method: method.to_string(),
            shots,
            seeds: vec![seed],
            per_seed_accuracy: vec![acc],
            mean_accuracy: acc,
            per_class_accuracy: cm.diagonal(),
            confusion: cm,
            provenance,
        })
    }
}

/// Combine per-seed reports of one (dataset, method, shots) cell: mean of
/// per-seed accuracies, pooled confusion counts renormalized.
pub fn aggregate_runs(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyInput)?;
    let c = first.confusion.num_classes();
    for r in reports {
        if r.dataset != first.dataset {
            return Err(EvalError::KeyMismatch("dataset".into()));
        }
        if r.method != first.method {
            return Err(EvalError::KeyMismatch("method".into()));
        }
        if r.shots != first.shots {
            return Err(EvalError::KeyMismatch("shots".into()));
        }
        if r.confusion.num_classes() != c {
            return Err(EvalError::KeyMismatch("class count".into()));
        }
    }
    let mut counts = vec![vec![0u64; c]; c];
    let mut seeds = Vec::new();
    let mut per_seed = Vec::new();
    let mut provenance = first.provenance.clone();
    provenance.manifest_digests.clear();
    provenance.checkpoint_ids.clear();
    for r in reports {
        seeds.extend(&r.seeds);
        per_seed.extend(&r.per_seed_accuracy);
        provenance
            .manifest_digests
            .extend(r.provenance.manifest_digests.iter().cloned());
        provenance
            .checkpoint_ids
            .extend(r.provenance.checkpoint_ids.iter().cloned());
        for i in 0..c {
            for j in 0..c {
                counts[i][j] += r.confusion.counts[i][j];
            }
        }
    }
    let normalized: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![0.0; c]
            } else {
                row.iter().map(|&v| v as f64 / total as f64).collect()
            }
        })
        .collect();
    let cm = ConfusionMatrix {
        counts,
        normalized,
        class_names: first.confusion.class_names.clone(),
    };
    Ok(EvalReport {
        dataset: first.dataset.clone(),
        method: first.method.clone(),
        shots: first.shots,
        mean_accuracy: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
        seeds,
        per_seed_accuracy: per_seed,
        per_class_accuracy: cm.diagonal(),
        confusion: cm,
        provenance,
    })
}

/// Helper shared by the binary and tests: logits straight to a report.
#[allow(clippy::too_many_arguments)]
pub fn report_from_logits<T: Scalar>(
    dataset: &str,
    method: &str,
    shots: Option<usize>,
    seed: u64,
    logits: &Array2<T>,
    labels: &[usize],
    class_names: &[String],
    provenance: Provenance,
) -> Result<EvalReport, EvalError> {
    let preds = predictions_from_logits(&logits.view());
    EvalReport::single(
        dataset,
        method,
        shots,
        seed,
        &preds,
        labels,
        class_names,
        provenance,
    )
}
