//! Evaluation-time inference: classifier banks are computed once per state
//! and reused across the test split; image encodes run in parallel.

use crate::forward::{cocoop_forward, ImageBatch};
use crate::state::{Method, PromptState};
use crate::MethodError;
use ndarray::Array2;
use rayon::prelude::*;
use rsprompt_backbone::{BackboneBundle, Injection};
use rsprompt_tensor::{Arr, Graph, Scalar};

/// Per-class text features (C × d_joint, normalized rows) under the state's
/// learned prompts. The class names are threaded through the prompt
/// machinery, so swapping in another dataset's vocabulary is the
/// cross-dataset seam. Conditional prompting has no image-independent bank.
pub fn class_text_features<T: Scalar>(
    bundle: &BackboneBundle<T>,
    state: &PromptState<T>,
    vocab: &[String],
) -> Result<Array2<T>, MethodError> {
    if vocab.is_empty() {
        return Err(MethodError::EmptyVocabulary);
    }
    if state.method == Method::Cocoop {
        return Err(MethodError::MethodMismatch {
            expected: "an image-independent bank method".into(),
            got: Method::Cocoop,
        });
    }
    let rows = vocab
        .par_iter()
        .map(|class| {
            let mut g = Graph::new();
            let ctx = g.constant(state.context.clone());
            let deep: Vec<Injection> = state
                .deep_text
                .iter()
                .enumerate()
                .map(|(i, t)| Injection {
                    layer: i + 2,
                    tokens: g.constant(t.clone()),
                })
                .collect();
            let prompt = crate::prompt::assemble_class_prompt(&mut g, bundle, ctx, class)?;
            let feat = bundle.encode_text_graph(&mut g, prompt.rows, prompt.eos_position, &deep)?;
            Ok::<_, MethodError>(rsprompt_tensor::as2(g.value(feat)).row(0).to_owned())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Array2::<T>::zeros((vocab.len(), bundle.geometry.d_joint));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r);
    }
    Ok(out)
}

/// The state's vision prompts per layer (1..=J), resolved to plain arrays.
/// Empty for methods that leave the vision tower untouched.
pub fn resolved_vision_prompts<T: Scalar>(state: &PromptState<T>) -> Vec<Arr<T>> {
    match state.method {
        Method::Maple => {
            let mut text_prompts: Vec<&Arr<T>> = vec![&state.context];
            text_prompts.extend(state.deep_text.iter());
            text_prompts
                .iter()
                .zip(&state.coupling)
                .map(|(tp, c)| {
                    let v = rsprompt_tensor::as2(tp).dot(&rsprompt_tensor::as2(&c.weight));
                    (v + &rsprompt_tensor::as2(&c.bias).row(0)).into_dyn()
                })
                .collect()
        }
        Method::Promptsrc => state.vision_prompts.clone(),
        _ => vec![],
    }
}

/// Prompted image features (B × d_joint, normalized rows), parallel over the
/// batch, order-stable.
pub fn prompted_image_features<T: Scalar>(
    bundle: &BackboneBundle<T>,
    state: &PromptState<T>,
    pixels: &[Arr<T>],
) -> Result<Array2<T>, MethodError> {
    let vision_prompts = resolved_vision_prompts(state);
    let rows = pixels
        .par_iter()
        .map(|px| {
            if vision_prompts.is_empty() {
                let e = bundle.encode_image(px)?;
                return Ok::<_, MethodError>(e.vector);
            }
            let base = bundle.image_base_tokens(px)?;
            let mut g = Graph::new();
            let base_var = g.constant(base);
            let vp1 = g.constant(vision_prompts[0].clone());
            let joined = g.concat_rows(&[base_var, vp1]);
            let deep: Vec<Injection> = vision_prompts[1..]
                .iter()
                .enumerate()
                .map(|(i, t)| Injection {
                    layer: i + 2,
                    tokens: g.constant(t.clone()),
                })
                .collect();
            let prompt_len = vision_prompts[0].shape()[0];
            let feat = bundle.encode_image_graph(&mut g, joined, prompt_len, &deep)?;
            Ok(rsprompt_tensor::as2(g.value(feat)).row(0).to_owned())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Array2::<T>::zeros((pixels.len(), bundle.geometry.d_joint));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r);
    }
    Ok(out)
}

/// Evaluation logits for a trained state on raw pixel tensors, with the
/// class names taken from `vocab` (in-domain or cross-dataset).
pub fn eval_logits<T: Scalar>(
    bundle: &BackboneBundle<T>,
    state: &PromptState<T>,
    pixels: &[Arr<T>],
    vocab: &[String],
) -> Result<Array2<T>, MethodError> {
    if pixels.is_empty() {
        return Err(MethodError::MissingInput("empty image batch"));
    }
    match state.method {
        Method::Zeroshot => Err(MethodError::MethodMismatch {
            expected: "a trained prompt state".into(),
            got: Method::Zeroshot,
        }),
        Method::Cocoop => {
            // instance-conditioned: one graph per image, full bank each
            let logits = pixels
                .par_iter()
                .map(|px| {
                    let mut g = Graph::new();
                    let bound = state.bind(&mut g);
                    let batch = ImageBatch::prepare(bundle, std::slice::from_ref(px), state.method)?;
                    let row = cocoop_forward(&mut g, bundle, &bound, &batch, vocab)?;
                    Ok::<_, MethodError>(rsprompt_tensor::as2(g.value(row)).row(0).to_owned())
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut out = Array2::<T>::zeros((pixels.len(), vocab.len()));
            for (i, r) in logits.into_iter().enumerate() {
                out.row_mut(i).assign(&r);
            }
            Ok(out)
        }
        _ => {
            let bank = class_text_features(bundle, state, vocab)?;
            let img = prompted_image_features(bundle, state, pixels)?;
            Ok(img.dot(&bank.t()).mapv(|v| v * bundle.tau()))
        }
    }
}
