//! Transformer towers with per-layer prompt-injection hooks.
//!
//! Both towers are pre-norm transformers built on the autodiff graph. All
//! weights enter as graph constants, so gradients can only reach injected
//! prompt tokens (and whatever produced them). Injection semantics:
//!
//! * text: prompt tokens live at rows `1..1+L` (right after the start
//!   marker); a deep injection at layer `l >= 2` replaces those rows with
//!   fresh tokens before block `l` runs.
//! * vision: prompt tokens are appended after the patch tokens; deep
//!   injections replace that tail block.

use crate::BackboneError;
use rsprompt_tensor::{Arr, Graph, Scalar, VarId};

/// One attention + MLP block, weights pre-transposed for row-major matmul.
#[derive(Debug, Clone)]
pub struct Block<T> {
    pub ln1_g: Arr<T>,
    pub ln1_b: Arr<T>,
    /// (d, 3d): packed q,k,v projection, applied as `x @ w`.
    pub attn_qkv_w: Arr<T>,
    /// (1, 3d)
    pub attn_qkv_b: Arr<T>,
    /// (d, d)
    pub attn_out_w: Arr<T>,
    /// (1, d)
    pub attn_out_b: Arr<T>,
    pub ln2_g: Arr<T>,
    pub ln2_b: Arr<T>,
    /// (d, 4d)
    pub mlp_fc_w: Arr<T>,
    /// (1, 4d)
    pub mlp_fc_b: Arr<T>,
    /// (4d, d)
    pub mlp_proj_w: Arr<T>,
    /// (1, d)
    pub mlp_proj_b: Arr<T>,
}

const LN_EPS: f64 = 1e-5;
const MASK_NEG: f64 = -1e9;

impl<T: Scalar> Block<T> {
    /// Apply the block to `x` (n×d). `mask` is an optional additive n×n
    /// attention bias (the causal mask for the text tower).
    fn forward(&self, g: &mut Graph<T>, x: VarId, heads: usize, mask: Option<&Arr<T>>) -> VarId {
        let d = self.ln1_g.len();
        let head_dim = d / heads;
        let eps = T::from_f64_lossy(LN_EPS);

        let ln1 = g.layer_norm_rows(x, &self.ln1_g, &self.ln1_b, eps);
        let qkv_w = g.constant(self.attn_qkv_w.clone());
        let qkv_b = g.constant(self.attn_qkv_b.clone());
        let qkv = g.matmul(ln1, qkv_w);
        let qkv = g.add_row_broadcast(qkv, qkv_b);
        let q = g.slice_cols(qkv, 0, d);
        let k = g.slice_cols(qkv, d, 2 * d);
        let v = g.slice_cols(qkv, 2 * d, 3 * d);

        let scale = T::from_f64_lossy(1.0 / (head_dim as f64).sqrt());
        let mask_id = mask.map(|m| g.constant(m.clone()));
        let mut outputs = Vec::with_capacity(heads);
        for h in 0..heads {
            let c0 = h * head_dim;
            let c1 = c0 + head_dim;
            let qh = g.slice_cols(q, c0, c1);
            let kh = g.slice_cols(k, c0, c1);
            let vh = g.slice_cols(v, c0, c1);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let scores = match mask_id {
                Some(m) => g.add(scores, m),
                None => scores,
            };
            let attn = g.softmax_rows(scores);
            outputs.push(g.matmul(attn, vh));
        }
        let merged = g.concat_cols(&outputs);
        let out_w = g.constant(self.attn_out_w.clone());
        let out_b = g.constant(self.attn_out_b.clone());
        let attn_out = g.matmul(merged, out_w);
        let attn_out = g.add_row_broadcast(attn_out, out_b);
        let x = g.add(x, attn_out);

        let ln2 = g.layer_norm_rows(x, &self.ln2_g, &self.ln2_b, eps);
        let fc_w = g.constant(self.mlp_fc_w.clone());
        let fc_b = g.constant(self.mlp_fc_b.clone());
        let hidden = g.matmul(ln2, fc_w);
        let hidden = g.add_row_broadcast(hidden, fc_b);
        let hidden = g.quick_gelu(hidden);
        let proj_w = g.constant(self.mlp_proj_w.clone());
        let proj_b = g.constant(self.mlp_proj_b.clone());
        let mlp_out = g.matmul(hidden, proj_w);
        let mlp_out = g.add_row_broadcast(mlp_out, proj_b);
        g.add(x, mlp_out)
    }
}

/// Deep prompt injection: replace a fixed row block before `layer` runs
/// (1-based; layer 1 prompts belong in the assembled input instead).
#[derive(Debug, Clone, Copy)]
pub struct Injection {
    pub layer: usize,
    pub tokens: VarId,
}

/// Text tower: causal transformer over the 77-token sequence.
#[derive(Debug, Clone)]
pub struct TextTower<T> {
    /// (vocab, d)
    pub token_embedding: Arr<T>,
    /// (77, d)
    pub positional_embedding: Arr<T>,
    pub blocks: Vec<Block<T>>,
    pub heads: usize,
    pub ln_final_g: Arr<T>,
    pub ln_final_b: Arr<T>,
    /// (d, d_joint)
    pub projection: Arr<T>,
}

impl<T: Scalar> TextTower<T> {
    fn causal_mask(&self, n: usize) -> Arr<T> {
        let neg = T::from_f64_lossy(MASK_NEG);
        ndarray::Array2::from_shape_fn((n, n), |(i, j)| if j > i { neg } else { T::zero() })
            .into_dyn()
    }

    /// Run the tower over embedded rows (77×d). `deep` holds per-layer
    /// replacements for rows `1..1+L`. Returns the normalized projected
    /// end-of-sequence feature (1×d_joint).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        rows: VarId,
        eos_position: usize,
        deep: &[Injection],
    ) -> Result<VarId, BackboneError> {
        let n = g.value(rows).shape()[0];
        let pos = g.constant(self.positional_embedding.clone());
        let mut x = g.add(rows, pos);
        let mask = self.causal_mask(n);
        for (i, block) in self.blocks.iter().enumerate() {
            let layer = i + 1;
            for inj in deep.iter().filter(|inj| inj.layer == layer) {
                if layer < 2 || layer > self.blocks.len() {
                    return Err(BackboneError::InjectionDepth {
                        layer,
                        layers: self.blocks.len(),
                    });
                }
                x = replace_rows(g, x, inj.tokens, 1)?;
            }
            x = block.forward(g, x, self.heads, Some(&mask));
        }
        let eps = T::from_f64_lossy(LN_EPS);
        let x = g.layer_norm_rows(x, &self.ln_final_g, &self.ln_final_b, eps);
        let eos_row = g.slice_rows(x, eos_position, eos_position + 1);
        let proj = g.constant(self.projection.clone());
        let feat = g.matmul(eos_row, proj);
        Ok(g.normalize_rows(feat))
    }
}

/// Vision tower: bidirectional transformer over `[class, patches, prompts?]`.
#[derive(Debug, Clone)]
pub struct VisionTower<T> {
    /// (3·p², d): patch projection, applied as `patches @ w`.
    pub patch_weight: Arr<T>,
    /// (1, d)
    pub class_embedding: Arr<T>,
    /// (1+n_patches, d)
    pub positional_embedding: Arr<T>,
    pub ln_pre_g: Arr<T>,
    pub ln_pre_b: Arr<T>,
    pub blocks: Vec<Block<T>>,
    pub heads: usize,
    pub ln_post_g: Arr<T>,
    pub ln_post_b: Arr<T>,
    /// (d, d_joint)
    pub projection: Arr<T>,
    pub patch: usize,
    pub image_size: usize,
}

impl<T: Scalar> VisionTower<T> {
    /// Flatten a (3, S, S) image into the (n_patches, 3·p²) patch matrix.
    /// Channel-major within each patch, matching a conv-weight flatten.
    pub fn patchify(&self, pixels: &Arr<T>) -> Result<ndarray::Array2<T>, BackboneError> {
        let s = self.image_size;
        if pixels.shape() != [3, s, s] {
            return Err(BackboneError::BadImageShape {
                expected: vec![3, s, s],
                got: pixels.shape().to_vec(),
            });
        }
        let p = self.patch;
        let grid = s / p;
        let mut out = ndarray::Array2::<T>::zeros((grid * grid, 3 * p * p));
        for gy in 0..grid {
            for gx in 0..grid {
                let row = gy * grid + gx;
                let mut col = 0;
                for c in 0..3 {
                    for py in 0..p {
                        for px in 0..p {
                            out[(row, col)] = pixels[[c, gy * p + py, gx * p + px]];
                            col += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Frozen token assembly: `[class; patches@W] + pos`, then pre-norm.
    /// Pure array math (no learnables upstream of these rows).
    pub fn base_tokens(&self, pixels: &Arr<T>) -> Result<Arr<T>, BackboneError> {
        let patches = self.patchify(pixels)?;
        let w = rsprompt_tensor::as2(&self.patch_weight);
        let embedded = patches.dot(&w);
        let cls = rsprompt_tensor::as2(&self.class_embedding);
        let mut tokens =
            ndarray::concatenate(ndarray::Axis(0), &[cls.view(), embedded.view()]).unwrap();
        tokens += &rsprompt_tensor::as2(&self.positional_embedding);
        // ln_pre, row-wise
        let g = self
            .ln_pre_g
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let b = self
            .ln_pre_b
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .unwrap();
        let eps = T::from_f64_lossy(LN_EPS);
        let n = tokens.ncols();
        let inv_n = T::one() / T::from_usize(n).unwrap();
        for mut row in tokens.rows_mut() {
            let mean = row.sum() * inv_n;
            let var = row.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) * inv_n;
            let denom = (var + eps).sqrt();
            for j in 0..n {
                row[j] = (row[j] - mean) / denom * g[j] + b[j];
            }
        }
        Ok(tokens.into_dyn())
    }

    /// Run the tower. `tokens` is `[class, patches]` (optionally with layer-1
    /// prompts already appended); `deep` replaces the appended tail block.
    /// Returns the normalized projected class feature (1×d_joint).
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        tokens: VarId,
        prompt_len: usize,
        deep: &[Injection],
    ) -> Result<VarId, BackboneError> {
        let raw = self.forward_raw(g, tokens, prompt_len, deep)?;
        Ok(g.normalize_rows(raw))
    }

    /// Like [`VisionTower::forward`] but without the final normalization.
    pub fn forward_raw(
        &self,
        g: &mut Graph<T>,
        tokens: VarId,
        prompt_len: usize,
        deep: &[Injection],
    ) -> Result<VarId, BackboneError> {
        let base_rows = self.positional_embedding.shape()[0];
        let total = g.value(tokens).shape()[0];
        if total != base_rows + prompt_len {
            return Err(BackboneError::InjectionShape {
                expected: vec![base_rows + prompt_len],
                got: vec![total],
            });
        }
        let mut x = tokens;
        for (i, block) in self.blocks.iter().enumerate() {
            let layer = i + 1;
            for inj in deep.iter().filter(|inj| inj.layer == layer) {
                if layer < 2 || layer > self.blocks.len() {
                    return Err(BackboneError::InjectionDepth {
                        layer,
                        layers: self.blocks.len(),
                    });
                }
                let l = g.value(inj.tokens).shape()[0];
                if l != prompt_len {
                    return Err(BackboneError::InjectionShape {
                        expected: vec![prompt_len],
                        got: vec![l],
                    });
                }
                x = replace_rows(g, x, inj.tokens, base_rows)?;
            }
            x = block.forward(g, x, self.heads, None);
        }
        let cls = g.slice_rows(x, 0, 1);
        let eps = T::from_f64_lossy(LN_EPS);
        let cls = g.layer_norm_rows(cls, &self.ln_post_g, &self.ln_post_b, eps);
        let proj = g.constant(self.projection.clone());
        Ok(g.matmul(cls, proj))
    }
}

/// Replace rows `[start, start+len)` of `x` with `tokens` (len×d).
fn replace_rows<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    tokens: VarId,
    start: usize,
) -> Result<VarId, BackboneError> {
    let (n, d) = {
        let s = g.value(x).shape();
        (s[0], s[1])
    };
    let t = g.value(tokens).shape().to_vec();
    if t.len() != 2 || t[1] != d || start + t[0] > n {
        return Err(BackboneError::InjectionShape {
            expected: vec![n - start, d],
            got: t,
        });
    }
    let len = t[0];
    let mut parts = Vec::with_capacity(3);
    if start > 0 {
        parts.push(g.slice_rows(x, 0, start));
    }
    parts.push(tokens);
    if start + len < n {
        parts.push(g.slice_rows(x, start + len, n));
    }
    Ok(g.concat_rows(&parts))
}
