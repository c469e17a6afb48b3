//! Cross-dataset transfer: source-trained prompts evaluated with target
//! class names, the source×target accuracy grid, and the winner analysis.

use crate::metrics::{confusion, predictions_from_logits, ConfusionMatrix};
use crate::EvalError;
use rsprompt_backbone::BackboneBundle;
use rsprompt_data::{enter_evaluation, Dataset};
use rsprompt_methods::{eval_logits, PromptState};
use serde::{Deserialize, Serialize};

/// What cross-dataset evaluation is asked to transfer.
pub enum CrossEvalSubject<'a> {
    /// A trained prompt state (class-name seam available).
    Prompt(&'a PromptState<f32>),
    /// The linear probe: weights are tied to source classes, no seam.
    LinearProbe,
}

/// Evaluate a source-trained subject on the full test split of `target`,
/// rebuilding the classifier bank with the target's class names. Never
/// touches target training data (evaluation-phase guard).
pub fn cross_eval(
    bundle: &BackboneBundle<f32>,
    subject: CrossEvalSubject<'_>,
    target: &Dataset,
) -> Result<(f64, ConfusionMatrix), EvalError> {
    let state = match subject {
        CrossEvalSubject::Prompt(state) => state,
        CrossEvalSubject::LinearProbe => {
            return Err(EvalError::UnsupportedMethod("linear probe".into()))
        }
    };
    let _guard = enter_evaluation();
    let items = target.test.items().to_vec();
    let mut preds = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    // chunked so full test splits never sit in memory at once
    for chunk in items.chunks(128) {
        let mut pixels = Vec::with_capacity(chunk.len());
        for (id, raw) in chunk {
            let img = image::open(target.image_path(id)).map_err(|e| EvalError::ImageIo {
                id: id.clone(),
                problem: e.to_string(),
            })?;
            pixels.push(bundle.preprocess.apply(&img)?.into_dyn());
            labels.push(target.class_id(raw)?);
        }
        let logits = eval_logits(bundle, state, &pixels, &target.class_vocab)?;
        preds.extend(predictions_from_logits(&logits.view()));
    }
    let cm = confusion(&preds, &labels, &target.class_vocab)?;
    Ok((cm.accuracy(), cm))
}

/// Source × target accuracy grid for one method. Missing cells stay `None`
/// (never zero: zeros would corrupt the winner analysis).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub method: String,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl TransferMatrix {
    pub fn empty(method: &str, sources: &[String], targets: &[String]) -> Self {
        TransferMatrix {
            method: method.to_string(),
            sources: sources.to_vec(),
            targets: targets.to_vec(),
            cells: vec![vec![None; targets.len()]; sources.len()],
        }
    }

    pub fn set(&mut self, source: &str, target: &str, accuracy: f64) -> Result<(), EvalError> {
        let i = self
            .sources
            .iter()
            .position(|s| s == source)
            .ok_or_else(|| EvalError::GridMismatch(format!("unknown source {source}")))?;
        let j = self
            .targets
            .iter()
            .position(|t| t == target)
            .ok_or_else(|| EvalError::GridMismatch(format!("unknown target {target}")))?;
        self.cells[i][j] = Some(accuracy);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().flatten().all(Option::is_some)
    }
}

/// One winner-matrix cell: the best method and its accuracy.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct WinnerCell {
    pub method: String,
    pub accuracy: f64,
    /// Set when another method reached exactly the same accuracy.
    pub tie: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WinnerMatrix {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub cells: Vec<Vec<Option<WinnerCell>>>,
}

/// Fixed comparison order; ties resolve toward the earlier method.
fn method_rank(name: &str) -> usize {
    match name {
        "coop" => 0,
        "cocoop" => 1,
        "maple" => 2,
        "promptsrc" => 3,
        _ => 4,
    }
}

/// Element-wise argmax across per-method transfer grids. Cells missing from
/// a method are excluded from that cell's comparison; cells missing from
/// every method propagate as missing.
pub fn winner(matrices: &[TransferMatrix]) -> Result<WinnerMatrix, EvalError> {
    let first = matrices.first().ok_or(EvalError::EmptyInput)?;
    for m in matrices {
        if m.sources != first.sources || m.targets != first.targets {
            return Err(EvalError::GridMismatch(format!(
                "{} grid differs from {}",
                m.method, first.method
            )));
        }
    }
    let mut ordered: Vec<&TransferMatrix> = matrices.iter().collect();
    ordered.sort_by_key(|m| method_rank(&m.method));

    let mut cells = vec![vec![None; first.targets.len()]; first.sources.len()];
    for i in 0..first.sources.len() {
        for j in 0..first.targets.len() {
            let mut best: Option<WinnerCell> = None;
            for m in &ordered {
                if let Some(acc) = m.cells[i][j] {
                    best = match best {
                        None => Some(WinnerCell {
                            method: m.method.clone(),
                            accuracy: acc,
                            tie: false,
                        }),
                        Some(mut cur) => {
                            if acc > cur.accuracy {
                                Some(WinnerCell {
                                    method: m.method.clone(),
                                    accuracy: acc,
                                    tie: false,
                                })
                            } else {
                                if acc == cur.accuracy {
                                    cur.tie = true;
                                }
                                Some(cur)
                            }
                        }
                    };
                }
            }
            cells[i][j] = best;
        }
    }
    Ok(WinnerMatrix {
        sources: first.sources.clone(),
        targets: first.targets.clone(),
        cells,
    })
}
