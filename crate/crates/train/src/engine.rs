//! The training loop: epoch-shuffled mini-batches, graph forward/backward,
//! SGD on the bound prompt tensors, per-epoch snapshots.

use crate::schedule::lr_at;
use crate::{TrainConfig, TrainError};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rsprompt_backbone::BackboneBundle;
use rsprompt_data::{enter_training, Dataset, FewShotManifest};
use rsprompt_methods::{
    forward, loss, ForwardOutput, FrozenTargets, ImageBatch, LossComponents, Method, MethodConfig,
    PromptState,
};
use rsprompt_tensor::optim::Sgd;
use rsprompt_tensor::{Arr, Graph};

/// Per-epoch training record (losses are step means).
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub components: LossComponents,
    pub last_lr: f64,
}

/// One optimizer step, as written to the structured training log.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub components: LossComponents,
}

/// A finished run: final state, per-epoch snapshots (when the method
/// ensembles), and the loss history.
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: PromptState<f32>,
    pub snapshots: Vec<PromptState<f32>>,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

/// Optimize a fresh prompt state for `method` on the sampled few-shot
/// manifest. Deterministic for a fixed (method, manifest, config, seed).
pub fn train(
    bundle: &BackboneBundle<f32>,
    dataset: &Dataset,
    manifest: &FewShotManifest,
    method: Method,
    mcfg: &MethodConfig,
    tcfg: &TrainConfig,
    templates: &[String],
) -> Result<TrainOutcome, TrainError> {
    mcfg.validate()?;
    if tcfg.batch_size == 0 {
        return Err(TrainError::BadConfig("batch size must be positive".into()));
    }
    let _phase = enter_training();
    let vocab = dataset.class_vocab.clone();
    let state = PromptState::init(method, bundle, mcfg, &vocab, tcfg.seed)?;
    if tcfg.epochs == 0 {
        return Ok(TrainOutcome {
            state,
            snapshots: vec![],
            history: vec![],
            steps: vec![],
        });
    }

    // decode and prepare every manifest image once
    let mut ids = Vec::with_capacity(manifest.items.len());
    let mut labels_all = Vec::with_capacity(manifest.items.len());
    let mut prepared: Vec<ImageBatch<f32>> = Vec::with_capacity(manifest.items.len());
    for (id, class) in &manifest.items {
        let path = dataset.image_path(id);
        let img = image::open(&path).map_err(|e| TrainError::ImageIo {
            id: id.clone(),
            problem: e.to_string(),
        })?;
        let pixels = bundle.preprocess.apply(&img)?.into_dyn();
        prepared.push(ImageBatch::prepare(bundle, &[pixels], method)?);
        ids.push(id.clone());
        labels_all.push(*class);
    }

    let frozen = if method == Method::Promptsrc {
        let take = mcfg.n_templates.min(templates.len()).max(1);
        Some(FrozenTargets {
            text_targets: rsprompt_methods::textual_diversity_targets(
                bundle,
                &vocab,
                &templates[..take],
            )?,
        })
    } else {
        None
    };

    let mut state = state;
    let mut sgd = Sgd::<f32>::new(tcfg.momentum, tcfg.weight_decay);
    let mut snapshots = Vec::new();
    let mut history = Vec::new();
    let mut steps_log = Vec::new();
    let n = prepared.len();
    let steps_per_epoch = n.div_ceil(tcfg.batch_size);

    for epoch in 1..=tcfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle(&mut order, &derived_rng(manifest, tcfg.seed, epoch));
        let mut epoch_loss = 0.0;
        let mut epoch_components = LossComponents::default();
        let mut last_lr = 0.0;

        for (step, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let frac = step as f64 / steps_per_epoch as f64;
            let lr = lr_at(epoch, frac, tcfg);
            last_lr = lr;

            let batch = merge_batches(chunk.iter().map(|&i| &prepared[i]));
            let labels: Vec<usize> = chunk.iter().map(|&i| labels_all[i]).collect();

            let mut g = Graph::new();
            let bound = state.bind(&mut g);
            let out: ForwardOutput = forward(
                &mut g,
                bundle,
                &state,
                &bound,
                mcfg,
                &batch,
                &vocab,
                frozen.as_ref(),
            )?;
            let (loss_id, components) = loss(&mut g, &out, &labels, mcfg)?;
            if !components.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    lr,
                    batch_ids: chunk.iter().map(|&i| ids[i].clone()).collect(),
                });
            }
            let grads = g.backward(loss_id);
            for (name, tensor) in state.named_mut() {
                if let Some(grad) = grads.get(bound.var(&name)) {
                    sgd.step(&name, tensor, grad, lr as f32);
                }
            }
            // prompt tensors must stay finite (divergence shows up here
            // before the next loss evaluation)
            if state.named().iter().any(|(_, t)| t.iter().any(|v| !v.is_finite())) {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step,
                    lr,
                    batch_ids: chunk.iter().map(|&i| ids[i].clone()).collect(),
                });
            }
            steps_log.push(StepRecord {
                epoch,
                step,
                lr,
                components,
            });
            epoch_loss += components.total;
            epoch_components.cross_entropy += components.cross_entropy;
            epoch_components.l1_image += components.l1_image;
            epoch_components.l1_text += components.l1_text;
            epoch_components.kl_logits += components.kl_logits;
            epoch_components.total += components.total;
        }
        let steps = steps_per_epoch as f64;
        epoch_components.cross_entropy /= steps;
        epoch_components.l1_image /= steps;
        epoch_components.l1_text /= steps;
        epoch_components.kl_logits /= steps;
        epoch_components.total /= steps;
        history.push(EpochRecord {
            epoch,
            mean_loss: epoch_loss / steps,
            components: epoch_components,
            last_lr,
        });
        log::debug!(
            "epoch {epoch}/{}: loss {:.5} (lr {last_lr:.2e})",
            tcfg.epochs,
            epoch_loss / steps
        );
        if mcfg.ensemble.enabled {
            snapshots.push(state.clone());
        }
    }
    Ok(TrainOutcome {
        state,
        snapshots,
        history,
        steps: steps_log,
    })
}

/// Stack per-image prepared inputs into one batch.
fn merge_batches<'a, I: Iterator<Item = &'a ImageBatch<f32>>>(parts: I) -> ImageBatch<f32> {
    let mut tokens: Option<Vec<Arr<f32>>> = None;
    let mut feats: Option<Vec<ndarray::Array1<f32>>> = None;
    for part in parts {
        if let Some(t) = &part.base_tokens {
            tokens.get_or_insert_with(Vec::new).extend(t.iter().cloned());
        }
        if let Some(f) = &part.frozen_feats_raw {
            feats
                .get_or_insert_with(Vec::new)
                .extend(f.rows().into_iter().map(|r| r.to_owned()));
        }
    }
    let frozen_feats_raw = feats.map(|rows| {
        let d = rows[0].len();
        let mut m = ndarray::Array2::<f32>::zeros((rows.len(), d));
        for (i, r) in rows.into_iter().enumerate() {
            m.row_mut(i).assign(&r);
        }
        m
    });
    ImageBatch {
        base_tokens: tokens,
        frozen_feats_raw,
    }
}

/// Epoch-shuffle stream derived from (manifest identity, seed, epoch).
fn derived_rng(manifest: &FewShotManifest, seed: u64, epoch: usize) -> ChaCha12Rng {
    let tag = format!(
        "batches|{}|k={}|seed={}|epoch={}",
        manifest.dataset, manifest.k, seed, epoch
    );
    let digest = rsprompt_backbone::archive::digest_bytes(tag.as_bytes());
    let mut key = [0u8; 32];
    for (i, chunk) in digest.as_bytes().chunks(2).take(32).enumerate() {
        key[i] = u8::from_str_radix(std::str::from_utf8(chunk).unwrap(), 16).unwrap();
    }
    ChaCha12Rng::from_seed(key)
}

fn shuffle(order: &mut [usize], rng: &ChaCha12Rng) {
    let mut rng = rng.clone();
    for i in (1..order.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
}
