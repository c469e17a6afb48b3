//! Shared prompt assembly: context rows spliced between the start marker and
//! the class-name tokens, end-position design.

use crate::MethodError;
use rsprompt_backbone::{BackboneBundle, CONTEXT_LEN};
use rsprompt_tensor::{Graph, Scalar, VarId};

/// An assembled class prompt in embedding space.
pub struct ClassPrompt {
    /// (77, d_text) rows: `[SOS, context, class tokens, EOS, pad...]`.
    pub rows: VarId,
    pub eos_position: usize,
    /// Half-open span of the class-name rows.
    pub class_span: (usize, usize),
}

/// Splice a context block (M×d, typically a leaf) in front of a class name's
/// token embeddings. The class tokens always survive: an over-long class body
/// is tail-truncated to the remaining budget.
pub fn assemble_class_prompt<T: Scalar>(
    g: &mut Graph<T>,
    bundle: &BackboneBundle<T>,
    context: VarId,
    class_name: &str,
) -> Result<ClassPrompt, MethodError> {
    let m = g.value(context).shape()[0];
    let d = bundle.geometry.d_text;
    if g.value(context).shape()[1] != d {
        return Err(MethodError::ShapeMismatch(format!(
            "context width {} != d_text {d}",
            g.value(context).shape()[1]
        )));
    }
    let mut class_ids = bundle.tokenizer.encode_body(class_name);
    let budget = CONTEXT_LEN - 2 - m;
    if class_ids.len() > budget {
        log::warn!(
            "class name {class_name:?} truncated from {} to {budget} tokens",
            class_ids.len()
        );
        class_ids.truncate(budget);
    }

    let table = rsprompt_tensor::as2(&bundle.text.token_embedding);
    let row_of = |id: u32| -> ndarray::Array2<T> {
        table
            .row(id as usize)
            .to_owned()
            .insert_axis(ndarray::Axis(0))
    };

    let sos = g.constant(row_of(bundle.tokenizer.sos_id).into_dyn());
    let mut class_rows = ndarray::Array2::<T>::zeros((class_ids.len(), d));
    for (i, &id) in class_ids.iter().enumerate() {
        class_rows.row_mut(i).assign(&table.row(id as usize));
    }
    let class = g.constant(class_rows.into_dyn());
    let eos = g.constant(row_of(bundle.tokenizer.eos_id).into_dyn());

    let eos_position = 1 + m + class_ids.len();
    let pad_count = CONTEXT_LEN - eos_position - 1;
    let mut parts = vec![sos, context, class, eos];
    if pad_count > 0 {
        let pad_row = row_of(bundle.tokenizer.pad_id);
        let mut pads = ndarray::Array2::<T>::zeros((pad_count, d));
        for i in 0..pad_count {
            pads.row_mut(i).assign(&pad_row.row(0));
        }
        parts.push(g.constant(pads.into_dyn()));
    }
    let rows = g.concat_rows(&parts);
    Ok(ClassPrompt {
        rows,
        eos_position,
        class_span: (1 + m, 1 + m + class_ids.len()),
    })
}

/// Stack per-row feature vars (each 1×d) into one (n×d) matrix var.
pub fn stack_features<T: Scalar>(g: &mut Graph<T>, rows: &[VarId]) -> VarId {
    g.concat_rows(rows)
}
