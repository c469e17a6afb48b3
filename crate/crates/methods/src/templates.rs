//! Textual diversity: many filled templates per class, averaged into frozen
//! regularization targets. The template list is a versioned text asset; the
//! embedded default can be overridden by a config-supplied file.

use crate::MethodError;
use ndarray::Array2;
use rayon::prelude::*;
use rsprompt_backbone::BackboneBundle;
use rsprompt_tensor::Scalar;
use std::path::Path;

const DEFAULT_ASSET: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/templates/diversity60.txt"));

/// The shipped template list (60 entries).
pub fn default_templates() -> Vec<String> {
    parse_templates(DEFAULT_ASSET).expect("embedded template asset is valid")
}

/// Load a template file: one template per line, `{}` as the class slot,
/// `#` comments ignored.
pub fn load_templates(path: &Path) -> Result<Vec<String>, MethodError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| MethodError::InvalidConfig(format!("{}: {e}", path.display())))?;
    parse_templates(&text)
}

fn parse_templates(text: &str) -> Result<Vec<String>, MethodError> {
    let templates: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if templates.is_empty() {
        return Err(MethodError::EmptyTemplates);
    }
    if let Some(bad) = templates.iter().find(|t| !t.contains("{}")) {
        return Err(MethodError::InvalidConfig(format!(
            "template missing {{}} slot: {bad:?}"
        )));
    }
    Ok(templates)
}

/// Per-class frozen text targets: the mean of the frozen text embeddings
/// over all filled templates, renormalized. One row per class.
pub fn textual_diversity_targets<T: Scalar>(
    bundle: &BackboneBundle<T>,
    vocab: &[String],
    templates: &[String],
) -> Result<Array2<T>, MethodError> {
    if templates.is_empty() {
        return Err(MethodError::EmptyTemplates);
    }
    if vocab.is_empty() {
        return Err(MethodError::EmptyVocabulary);
    }
    let rows = vocab
        .par_iter()
        .map(|class| {
            let mut acc = ndarray::Array1::<T>::zeros(bundle.geometry.d_joint);
            for template in templates {
                let seq = bundle.tokenizer.tokenize_with_class(template, class)?;
                let feat = bundle.encode_text(&bundle.embed_tokens(&seq)?)?;
                acc = acc + feat.vector;
            }
            let count = T::from_usize(templates.len()).unwrap();
            acc.mapv_inplace(|v| v / count);
            let norm = acc.fold(T::zero(), |s, &v| s + v * v).sqrt();
            acc.mapv_inplace(|v| v / norm);
            Ok::<_, MethodError>(acc)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Array2::<T>::zeros((vocab.len(), bundle.geometry.d_joint));
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_asset_has_sixty_templates() {
        let t = default_templates();
        assert_eq!(t.len(), 60);
        assert!(t.iter().all(|x| x.contains("{}")));
    }

    #[test]
    fn single_template_equals_plain_embedding() {
        let bundle = rsprompt_backbone::BackboneBundle::<f32>::micro(3);
        let vocab = vec!["photo".to_string(), "an".to_string()];
        let templates = vec!["a photo of a {}".to_string()];
        let targets = textual_diversity_targets(&bundle, &vocab, &templates).unwrap();
        for (i, class) in vocab.iter().enumerate() {
            let seq = bundle
                .tokenizer
                .tokenize_with_class(&templates[0], class)
                .unwrap();
            let feat = bundle
                .encode_text(&bundle.embed_tokens(&seq).unwrap())
                .unwrap();
            for (a, b) in targets.row(i).iter().zip(feat.vector.iter()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn averaging_matches_direct_oracle() {
        // mean-then-renormalize, computed independently per class
        let bundle = rsprompt_backbone::BackboneBundle::<f64>::micro(3);
        let vocab = vec!["photo".to_string()];
        let templates = vec![
            "a photo of a {}".to_string(),
            "an is of {}".to_string(),
            "{} of a photo".to_string(),
        ];
        let targets = textual_diversity_targets(&bundle, &vocab, &templates).unwrap();
        let mut acc = ndarray::Array1::<f64>::zeros(bundle.geometry.d_joint);
        for t in &templates {
            let seq = bundle.tokenizer.tokenize_with_class(t, "photo").unwrap();
            let feat = bundle
                .encode_text(&bundle.embed_tokens(&seq).unwrap())
                .unwrap();
            acc = acc + feat.vector;
        }
        acc /= templates.len() as f64;
        let norm = acc.dot(&acc).sqrt();
        acc /= norm;
        for (a, b) in targets.row(0).iter().zip(acc.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        // output rows are unit norm
        let n = targets.row(0).dot(&targets.row(0)).sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_template_list_rejected() {
        let bundle = rsprompt_backbone::BackboneBundle::<f32>::micro(3);
        let vocab = vec!["photo".to_string()];
        assert!(matches!(
            textual_diversity_targets(&bundle, &vocab, &[]),
            Err(MethodError::EmptyTemplates)
        ));
    }
}
