//! Graph-mode forward passes and losses for the four prompt-learning
//! methods. Every forward is a pure function of (state, batch); gradients
//! reach only the tensors bound from the [`PromptState`].

use crate::prompt::assemble_class_prompt;
use crate::state::{vocab_digest, BoundState, Method, MethodConfig, PromptState};
use crate::MethodError;
use ndarray::Array2;
use rsprompt_backbone::{BackboneBundle, Injection};
use rsprompt_tensor::{Arr, Graph, Scalar, VarId};

/// Per-batch image inputs. Frozen features are cached reusable work; token
/// matrices are required only when the vision tower carries prompts.
#[derive(Debug, Clone)]
pub struct ImageBatch<T> {
    /// Assembled `[class, patches]` rows per image (pre-norm applied).
    pub base_tokens: Option<Vec<Arr<T>>>,
    /// Frozen post-projection (unnormalized) features, one row per image.
    pub frozen_feats_raw: Option<Array2<T>>,
}

impl<T: Scalar> ImageBatch<T> {
    /// Prepare exactly what `method` consumes from raw pixel tensors.
    pub fn prepare(
        bundle: &BackboneBundle<T>,
        pixels: &[Arr<T>],
        method: Method,
    ) -> Result<Self, MethodError> {
        let needs_tokens = matches!(method, Method::Maple | Method::Promptsrc);
        let needs_feats = matches!(method, Method::Coop | Method::Cocoop | Method::Promptsrc);
        let base_tokens = if needs_tokens {
            Some(
                pixels
                    .iter()
                    .map(|px| bundle.image_base_tokens(px))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        let frozen_feats_raw = if needs_feats {
            let mut feats = Array2::<T>::zeros((pixels.len(), bundle.geometry.d_joint));
            for (i, px) in pixels.iter().enumerate() {
                let f = bundle.encode_image_raw(px)?;
                feats.row_mut(i).assign(&f.vector);
            }
            Some(feats)
        } else {
            None
        };
        Ok(ImageBatch {
            base_tokens,
            frozen_feats_raw,
        })
    }

    pub fn len(&self) -> usize {
        self.base_tokens
            .as_ref()
            .map(|t| t.len())
            .or_else(|| self.frozen_feats_raw.as_ref().map(|f| f.nrows()))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Extra frozen inputs consumed by the self-regulating method.
#[derive(Debug, Clone)]
pub struct FrozenTargets<T> {
    /// Diversity-averaged frozen text features, one normalized row per class.
    pub text_targets: Array2<T>,
}

/// What a forward pass produced.
pub enum ForwardOutput {
    Logits(VarId),
    SelfRegulating(PromptsrcOutputs),
}

impl ForwardOutput {
    /// The (prompted) logit node.
    pub fn logits(&self) -> VarId {
        match self {
            ForwardOutput::Logits(l) => *l,
            ForwardOutput::SelfRegulating(o) => o.logits,
        }
    }
}

/// Prompted and frozen views produced by the self-regulating forward.
pub struct PromptsrcOutputs {
    /// Prompted-path logits (B×C).
    pub logits: VarId,
    /// Frozen-path logits (B×C); independent of the prompt state.
    pub frozen_logits: VarId,
    /// (prompted, frozen) normalized image features (B×d_joint).
    pub image_pair: (VarId, VarId),
    /// (prompted, frozen) normalized class text features (C×d_joint).
    pub text_pair: (VarId, VarId),
}

/// Dispatch the method-specific forward.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    state: &PromptState<T>,
    bound: &BoundState,
    cfg: &MethodConfig,
    batch: &ImageBatch<T>,
    vocab: &[String],
    frozen: Option<&FrozenTargets<T>>,
) -> Result<ForwardOutput, MethodError> {
    if vocab.is_empty() {
        return Err(MethodError::EmptyVocabulary);
    }
    if batch.is_empty() {
        return Err(MethodError::MissingInput("empty image batch"));
    }
    if let Some(d) = &state.vocab_digest {
        if *d != vocab_digest(vocab) && state.method != Method::Zeroshot {
            return Err(MethodError::VocabularyMismatch);
        }
    }
    match state.method {
        Method::Coop => Ok(ForwardOutput::Logits(coop_forward(
            g, bundle, bound, batch, vocab,
        )?)),
        Method::Cocoop => Ok(ForwardOutput::Logits(cocoop_forward(
            g, bundle, bound, batch, vocab,
        )?)),
        Method::Maple => Ok(ForwardOutput::Logits(maple_forward(
            g, bundle, state, bound, cfg, batch, vocab,
        )?)),
        Method::Promptsrc => {
            let targets = frozen.ok_or(MethodError::MissingInput("frozen text targets"))?;
            Ok(ForwardOutput::SelfRegulating(promptsrc_forward(
                g, bundle, state, bound, cfg, batch, vocab, targets,
            )?))
        }
        Method::Zeroshot => Err(MethodError::MethodMismatch {
            expected: "a trainable method".into(),
            got: Method::Zeroshot,
        }),
    }
}

/// Static learnable context: per-class text features from
/// `[context ⊕ class tokens]`, frozen image features.
pub fn coop_forward<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    bound: &BoundState,
    batch: &ImageBatch<T>,
    vocab: &[String],
) -> Result<VarId, MethodError> {
    let ctx = bound.var("context");
    let bank = text_bank(g, bundle, ctx, &[], vocab)?;
    let feats_raw = batch
        .frozen_feats_raw
        .as_ref()
        .ok_or(MethodError::MissingInput("frozen image features"))?;
    let feats = g.constant(feats_raw.clone().into_dyn());
    let img = g.normalize_rows(feats);
    Ok(scaled_logits(g, bundle, img, bank))
}

/// Instance-conditioned context: a meta-network maps each frozen image
/// feature to a shift added to every context row.
pub fn cocoop_forward<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    bound: &BoundState,
    batch: &ImageBatch<T>,
    vocab: &[String],
) -> Result<VarId, MethodError> {
    let ctx = bound.var("context");
    let feats_raw = batch
        .frozen_feats_raw
        .as_ref()
        .ok_or(MethodError::MissingInput("frozen image features"))?;
    let w1 = bound.var("meta.w1");
    let b1 = bound.var("meta.b1");
    let w2 = bound.var("meta.w2");
    let b2 = bound.var("meta.b2");

    let mut logit_rows = Vec::with_capacity(feats_raw.nrows());
    for i in 0..feats_raw.nrows() {
        let feat_row = g.constant(
            feats_raw
                .row(i)
                .to_owned()
                .insert_axis(ndarray::Axis(0))
                .into_dyn(),
        );
        // π_i = w2 · relu(w1 · f_i + b1) + b2
        let h = g.matmul(feat_row, w1);
        let h = g.add_row_broadcast(h, b1);
        let h = g.relu(h);
        let shift = g.matmul(h, w2);
        let shift = g.add_row_broadcast(shift, b2);
        // broadcast the shift over all M context rows
        let eff_ctx = g.add_row_broadcast(ctx, shift);
        let bank = text_bank(g, bundle, eff_ctx, &[], vocab)?;
        let img = g.normalize_rows(feat_row);
        logit_rows.push(scaled_logits(g, bundle, img, bank));
    }
    Ok(g.concat_rows(&logit_rows))
}

/// Deep multi-modal prompting: per-layer text prompts, vision prompts
/// derived from them through per-layer linear couplings.
pub fn maple_forward<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    state: &PromptState<T>,
    bound: &BoundState,
    cfg: &MethodConfig,
    batch: &ImageBatch<T>,
    vocab: &[String],
) -> Result<VarId, MethodError> {
    let depth = cfg.prompt_depth;
    if depth > bundle.geometry.text_layers || depth > bundle.geometry.vision_layers {
        return Err(MethodError::InvalidConfig(format!(
            "prompt depth {depth} exceeds encoder depth"
        )));
    }
    if state.coupling.len() != depth {
        return Err(MethodError::ShapeMismatch(format!(
            "expected {depth} coupling maps, found {}",
            state.coupling.len()
        )));
    }
    let ctx = bound.var("context");
    // text prompts per layer: layer 1 = context, layers 2..=J = deep tensors
    let mut text_prompts = vec![ctx];
    for l in 2..=depth {
        text_prompts.push(bound.var(&format!("deep_text.{l}")));
    }
    // vision prompts are all derived: vp_l = tp_l @ W_l + b_l
    let mut vision_prompts = Vec::with_capacity(depth);
    for (idx, tp) in text_prompts.iter().enumerate() {
        let w = bound.var(&format!("coupling.{}.weight", idx + 1));
        let b = bound.var(&format!("coupling.{}.bias", idx + 1));
        let vp = g.matmul(*tp, w);
        vision_prompts.push(g.add_row_broadcast(vp, b));
    }

    let deep_text: Vec<Injection> = (2..=depth)
        .map(|l| Injection {
            layer: l,
            tokens: text_prompts[l - 1],
        })
        .collect();
    let bank = text_bank(g, bundle, ctx, &deep_text, vocab)?;

    let tokens = batch
        .base_tokens
        .as_ref()
        .ok_or(MethodError::MissingInput("image token rows"))?;
    let deep_vision: Vec<Injection> = (2..=depth)
        .map(|l| Injection {
            layer: l,
            tokens: vision_prompts[l - 1],
        })
        .collect();
    let mut img_rows = Vec::with_capacity(tokens.len());
    for base in tokens {
        let base_var = g.constant(base.clone());
        let joined = g.concat_rows(&[base_var, vision_prompts[0]]);
        let feat =
            bundle.encode_image_graph(g, joined, cfg.vision_prompt_len, &deep_vision)?;
        img_rows.push(feat);
    }
    let img = g.concat_rows(&img_rows);
    Ok(scaled_logits(g, bundle, img, bank))
}

/// Independent deep prompts on both towers plus the frozen-path views used
/// by the self-regulating loss.
#[allow(clippy::too_many_arguments)]
pub fn promptsrc_forward<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    state: &PromptState<T>,
    bound: &BoundState,
    cfg: &MethodConfig,
    batch: &ImageBatch<T>,
    vocab: &[String],
    frozen: &FrozenTargets<T>,
) -> Result<PromptsrcOutputs, MethodError> {
    let depth = cfg.prompt_depth;
    if state.vision_prompts.len() != depth {
        return Err(MethodError::ShapeMismatch(format!(
            "expected {depth} vision prompt tensors, found {}",
            state.vision_prompts.len()
        )));
    }
    if frozen.text_targets.nrows() != vocab.len() {
        return Err(MethodError::ShapeMismatch(format!(
            "{} frozen text targets for {} classes",
            frozen.text_targets.nrows(),
            vocab.len()
        )));
    }
    let ctx = bound.var("context");
    let deep_text: Vec<Injection> = (2..=depth)
        .map(|l| Injection {
            layer: l,
            tokens: bound.var(&format!("deep_text.{l}")),
        })
        .collect();
    let prompted_text = text_bank(g, bundle, ctx, &deep_text, vocab)?;

    let tokens = batch
        .base_tokens
        .as_ref()
        .ok_or(MethodError::MissingInput("image token rows"))?;
    let vp1 = bound.var("vision_prompts.1");
    let deep_vision: Vec<Injection> = (2..=depth)
        .map(|l| Injection {
            layer: l,
            tokens: bound.var(&format!("vision_prompts.{l}")),
        })
        .collect();
    let mut img_rows = Vec::with_capacity(tokens.len());
    for base in tokens {
        let base_var = g.constant(base.clone());
        let joined = g.concat_rows(&[base_var, vp1]);
        let feat =
            bundle.encode_image_graph(g, joined, cfg.vision_prompt_len, &deep_vision)?;
        img_rows.push(feat);
    }
    let prompted_img = g.concat_rows(&img_rows);

    let feats_raw = batch
        .frozen_feats_raw
        .as_ref()
        .ok_or(MethodError::MissingInput("frozen image features"))?;
    let frozen_raw = g.constant(feats_raw.clone().into_dyn());
    let frozen_img = g.normalize_rows(frozen_raw);
    let frozen_text = g.constant(frozen.text_targets.clone().into_dyn());

    let logits = scaled_logits(g, bundle, prompted_img, prompted_text);
    let frozen_logits = scaled_logits(g, bundle, frozen_img, frozen_text);
    Ok(PromptsrcOutputs {
        logits,
        frozen_logits,
        image_pair: (prompted_img, frozen_img),
        text_pair: (prompted_text, frozen_text),
    })
}

/// Scalar values of the loss terms after a forward/backward pass.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct LossComponents {
    pub cross_entropy: f64,
    pub l1_image: f64,
    pub l1_text: f64,
    pub kl_logits: f64,
    pub total: f64,
}

/// Attach the training loss for `out`: plain cross-entropy, or the composite
/// self-regulating objective
/// `CE + λ1·L1(img pair) + λ2·L1(text pair) + KL(prompted ‖ frozen)`.
pub fn loss<T: Scalar>(
    g: &mut Graph<T>,
    out: &ForwardOutput,
    labels: &[usize],
    cfg: &MethodConfig,
) -> Result<(VarId, LossComponents), MethodError> {
    let classes = rsprompt_tensor::as2(g.value(out.logits())).ncols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(MethodError::LabelOutOfRange {
            label: bad,
            classes,
        });
    }
    let to64 = |g: &Graph<T>, v: VarId| g.value(v).first().unwrap().to_f64().unwrap();
    match out {
        ForwardOutput::Logits(logits) => {
            let ce = g.cross_entropy_mean(*logits, labels);
            let ce_v = to64(g, ce);
            Ok((
                ce,
                LossComponents {
                    cross_entropy: ce_v,
                    total: ce_v,
                    ..Default::default()
                },
            ))
        }
        ForwardOutput::SelfRegulating(o) => {
            let ce = g.cross_entropy_mean(o.logits, labels);
            let l1_img = g.l1_mean(o.image_pair.0, o.image_pair.1);
            let l1_txt = g.l1_mean(o.text_pair.0, o.text_pair.1);
            let kl = g.kl_from_logits_mean(o.logits, o.frozen_logits);
            let w_img = g.scale(l1_img, T::from_f64_lossy(cfg.lambda1));
            let w_txt = g.scale(l1_txt, T::from_f64_lossy(cfg.lambda2));
            let s1 = g.add(ce, w_img);
            let s2 = g.add(s1, w_txt);
            let total = g.add(s2, kl);
            Ok((
                total,
                LossComponents {
                    cross_entropy: to64(g, ce),
                    l1_image: to64(g, l1_img),
                    l1_text: to64(g, l1_txt),
                    kl_logits: to64(g, kl),
                    total: to64(g, total),
                },
            ))
        }
    }
}

/// Per-class text features under a shared context: (C × d_joint), rows
/// normalized.
fn text_bank<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    context: VarId,
    deep: &[Injection],
    vocab: &[String],
) -> Result<VarId, MethodError> {
    let mut rows = Vec::with_capacity(vocab.len());
    for class in vocab {
        let prompt = assemble_class_prompt(g, bundle, context, class)?;
        let feat = bundle.encode_text_graph(g, prompt.rows, prompt.eos_position, deep)?;
        rows.push(feat);
    }
    Ok(g.concat_rows(&rows))
}

/// `τ · images @ bankᵀ`
fn scaled_logits<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    images: VarId,
    bank: VarId,
) -> VarId {
    let bank_t = g.transpose(bank);
    let sim = g.matmul(images, bank_t);
    g.scale(sim, bundle.tau())
}
