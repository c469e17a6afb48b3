//! Frozen-feature extraction and the on-disk feature cache.

use crate::ProbeError;
use ndarray::Array2;
use rayon::prelude::*;
use rsprompt_backbone::archive::TensorArchive;
use rsprompt_backbone::BackboneBundle;
use std::path::Path;

/// Frozen image features with labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    /// (n, d_joint)
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
    pub split_id: String,
    pub backbone_digest: String,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    /// Cache file name for a (dataset, split, backbone) triple.
    pub fn cache_name(dataset: &str, split_id: &str, backbone_digest: &str) -> String {
        format!("{dataset}_{split_id}_{}.rsw", &backbone_digest[..16.min(backbone_digest.len())])
    }

    pub fn save(&self, path: &Path) -> Result<(), ProbeError> {
        let mut archive = TensorArchive::new();
        archive.insert("features", self.features.clone().into_dyn());
        let labels: Vec<f32> = self.labels.iter().map(|&l| l as f32).collect();
        archive.insert("labels", ndarray::Array1::from_vec(labels).into_dyn());
        archive
            .metadata
            .insert("split_id".into(), serde_json::json!(self.split_id));
        archive.metadata.insert(
            "backbone_digest".into(),
            serde_json::json!(self.backbone_digest),
        );
        archive.write_to(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ProbeError> {
        let archive = TensorArchive::read_from(path)?;
        let features = rsprompt_tensor::as2(archive.get("features")?).to_owned();
        let labels: Vec<usize> = archive
            .get("labels")?
            .iter()
            .map(|&v| v as usize)
            .collect();
        let meta_str = |key: &str| -> String {
            archive
                .metadata
                .get(key)
                .and_then(|v| v.as_str())
                .unwrap_or_default()
                .to_string()
        };
        Ok(FeatureTable {
            features,
            labels,
            split_id: meta_str("split_id"),
            backbone_digest: meta_str("backbone_digest"),
        })
    }
}

/// Encode every listed image with the frozen backbone. Row order follows the
/// item list; extraction parallelizes over images and stays order-stable.
/// `normalize` selects unit-norm features.
pub fn extract_features(
    bundle: &BackboneBundle<f32>,
    root: &Path,
    items: &[(String, usize)],
    split_id: &str,
    normalize: bool,
) -> Result<FeatureTable, ProbeError> {
    if items.is_empty() {
        return Err(ProbeError::EmptyTable);
    }
    let rows = items
        .par_iter()
        .map(|(id, _)| {
            let path = root.join(id);
            let img = image::open(&path).map_err(|e| ProbeError::ImageIo {
                id: id.clone(),
                problem: e.to_string(),
            })?;
            let pixels = bundle.preprocess.apply(&img)?;
            let feat = if normalize {
                bundle.encode_image(&pixels.into_dyn())?
            } else {
                bundle.encode_image_raw(&pixels.into_dyn())?
            };
            Ok::<_, ProbeError>(feat.vector)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let d = rows[0].len();
    let mut features = Array2::<f32>::zeros((items.len(), d));
    for (i, row) in rows.into_iter().enumerate() {
        features.row_mut(i).assign(&row);
    }
    Ok(FeatureTable {
        features,
        labels: items.iter().map(|(_, l)| *l).collect(),
        split_id: split_id.to_string(),
        backbone_digest: bundle.digest(),
    })
}
