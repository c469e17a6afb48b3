//! Zero-shot classification with a hand-crafted template.

use crate::state::vocab_digest;
use crate::MethodError;
use rayon::prelude::*;
use rsprompt_backbone::{BackboneBundle, JointEmbedding};
use rsprompt_tensor::Scalar;

/// One frozen text embedding per class.
#[derive(Debug, Clone)]
pub struct ClassifierBank<T> {
    pub embeddings: Vec<JointEmbedding<T>>,
    pub class_names: Vec<String>,
    /// How the bank was produced (template or method tag), for provenance.
    pub provenance: String,
    pub vocab_digest: String,
}

/// Encode `template` filled with every class name. Deterministic; one
/// normalized embedding per class.
pub fn build_zeroshot_classifier<T: Scalar>(
    bundle: &BackboneBundle<T>,
    vocab: &[String],
    template: &str,
) -> Result<ClassifierBank<T>, MethodError> {
    if vocab.is_empty() {
        return Err(MethodError::EmptyVocabulary);
    }
    let embeddings = vocab
        .par_iter()
        .map(|class| {
            let seq = bundle.tokenizer.tokenize_with_class(template, class)?;
            let prompt = bundle.embed_tokens(&seq)?;
            bundle.encode_text(&prompt)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClassifierBank {
        embeddings,
        class_names: vocab.to_vec(),
        provenance: format!("zeroshot:{template}"),
        vocab_digest: vocab_digest(vocab),
    })
}
