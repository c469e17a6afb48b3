//! Checkpoint persistence: prompt tensors in the named-tensor archive with a
//! metadata block. Round-trips are bit-exact; loading against a different
//! backbone is refused, a changed config hash only warns.

use crate::TrainError;
use rsprompt_backbone::archive::TensorArchive;
use rsprompt_methods::state::{Coupling, MetaNet};
use rsprompt_methods::{Method, PromptState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub method: Method,
    pub init_template: String,
    pub seed: u64,
    pub vocab_digest: Option<String>,
    pub config_hash: String,
    pub manifest_digest: String,
    pub backbone_digest: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub wall_clock_secs: f64,
}

pub fn save_checkpoint(
    state: &PromptState<f32>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<(), TrainError> {
    let mut archive = TensorArchive::new();
    for (name, tensor) in state.named() {
        archive.insert(&name, tensor.clone());
    }
    archive
        .metadata
        .insert("checkpoint".into(), serde_json::to_value(meta)?);
    archive.write_to(path)?;
    Ok(())
}

/// Load a checkpoint, refusing an archive trained against another backbone.
pub fn load_checkpoint(
    path: &Path,
    expected_backbone_digest: &str,
    expected_config_hash: Option<&str>,
) -> Result<(PromptState<f32>, CheckpointMeta), TrainError> {
    let archive = TensorArchive::read_from(path)?;
    let meta: CheckpointMeta = serde_json::from_value(
        archive
            .metadata
            .get("checkpoint")
            .cloned()
            .ok_or_else(|| TrainError::Checkpoint("missing checkpoint metadata".into()))?,
    )?;
    if meta.backbone_digest != expected_backbone_digest {
        return Err(TrainError::DigestMismatch {
            expected: meta.backbone_digest.clone(),
            got: expected_backbone_digest.to_string(),
        });
    }
    if let Some(hash) = expected_config_hash {
        if hash != meta.config_hash {
            log::warn!(
                "checkpoint {} was trained under config {}, current config is {hash}",
                path.display(),
                meta.config_hash
            );
        }
    }
    let state = rebuild_state(&archive, &meta)?;
    Ok((state, meta))
}

/// Rebuild a [`PromptState`] from named tensors.
fn rebuild_state(
    archive: &TensorArchive,
    meta: &CheckpointMeta,
) -> Result<PromptState<f32>, TrainError> {
    let take = |name: &str| -> Result<rsprompt_tensor::Arr<f32>, TrainError> {
        archive
            .tensors
            .get(name)
            .cloned()
            .ok_or_else(|| TrainError::Checkpoint(format!("missing tensor {name}")))
    };
    let context = take("context")?;

    let mut deep_text = Vec::new();
    let mut indexed: BTreeMap<usize, rsprompt_tensor::Arr<f32>> = BTreeMap::new();
    for (name, tensor) in &archive.tensors {
        if let Some(layer) = name.strip_prefix("deep_text.") {
            let l: usize = layer
                .parse()
                .map_err(|_| TrainError::Checkpoint(format!("bad tensor name {name}")))?;
            indexed.insert(l, tensor.clone());
        }
    }
    let mut expected = 2;
    for (l, tensor) in indexed {
        if l != expected {
            return Err(TrainError::Checkpoint(format!(
                "non-contiguous deep_text layers: expected {expected}, found {l}"
            )));
        }
        deep_text.push(tensor);
        expected += 1;
    }

    let mut vision_prompts = Vec::new();
    let mut indexed: BTreeMap<usize, rsprompt_tensor::Arr<f32>> = BTreeMap::new();
    for (name, tensor) in &archive.tensors {
        if let Some(layer) = name.strip_prefix("vision_prompts.") {
            let l: usize = layer
                .parse()
                .map_err(|_| TrainError::Checkpoint(format!("bad tensor name {name}")))?;
            indexed.insert(l, tensor.clone());
        }
    }
    for (i, (l, tensor)) in indexed.into_iter().enumerate() {
        if l != i + 1 {
            return Err(TrainError::Checkpoint(
                "non-contiguous vision prompt layers".into(),
            ));
        }
        vision_prompts.push(tensor);
    }

    let mut coupling = Vec::new();
    for l in 1.. {
        let w = format!("coupling.{l}.weight");
        if !archive.tensors.contains_key(&w) {
            break;
        }
        coupling.push(Coupling {
            weight: take(&w)?,
            bias: take(&format!("coupling.{l}.bias"))?,
        });
    }

    let meta_net = if archive.tensors.contains_key("meta.w1") {
        Some(MetaNet {
            w1: take("meta.w1")?,
            b1: take("meta.b1")?,
            w2: take("meta.w2")?,
            b2: take("meta.b2")?,
        })
    } else {
        None
    };

    Ok(PromptState {
        method: meta.method,
        context,
        deep_text,
        vision_prompts,
        coupling,
        meta: meta_net,
        init_template: meta.init_template.clone(),
        seed: meta.seed,
        vocab_digest: meta.vocab_digest.clone(),
    })
}
