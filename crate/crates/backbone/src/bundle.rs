//! The frozen backbone bundle: encoder weights, tokenizer tables, logit
//! scale, and preprocessing spec, loaded once and immutable afterwards.

use crate::archive::{digest_tensors, TensorArchive};
use crate::encoder::{Block, Injection, TextTower, VisionTower};
use crate::preprocess::PreprocessSpec;
use crate::tokenizer::{TokenSequence, Tokenizer, CONTEXT_LEN};
use crate::BackboneError;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rsprompt_tensor::{Arr, Graph, Scalar, VarId};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Tower dimensions. The reference geometry is the ViT-B/16 dual encoder;
/// the micro geometry drives weight-free tests with the same code paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneGeometry {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_text: usize,
    pub text_layers: usize,
    pub text_heads: usize,
    pub d_vision: usize,
    pub vision_layers: usize,
    pub vision_heads: usize,
    pub patch: usize,
    pub image_size: usize,
    pub d_joint: usize,
}

impl BackboneGeometry {
    /// 12-layer/512-wide/8-head text tower, ViT-B/16 vision tower.
    pub fn vit_b16() -> Self {
        BackboneGeometry {
            vocab_size: 49152,
            context_len: CONTEXT_LEN,
            d_text: 512,
            text_layers: 12,
            text_heads: 8,
            d_vision: 768,
            vision_layers: 12,
            vision_heads: 12,
            patch: 16,
            image_size: 224,
            d_joint: 512,
        }
    }

    /// 2 layers, width 32, 4 heads, 8×8 patches on 16×16 inputs, vocab 64.
    pub fn micro() -> Self {
        BackboneGeometry {
            vocab_size: 64,
            context_len: CONTEXT_LEN,
            d_text: 32,
            text_layers: 2,
            text_heads: 4,
            d_vision: 32,
            vision_layers: 2,
            vision_heads: 4,
            patch: 8,
            image_size: 16,
            d_joint: 16,
        }
    }

    fn n_patches(&self) -> usize {
        let g = self.image_size / self.patch;
        g * g
    }
}

/// A prompt in embedding space: 77 rows of `d_text`, with a mask naming the
/// trainable rows.
#[derive(Debug, Clone)]
pub struct EmbeddedPrompt<T> {
    /// (77, d_text)
    pub vectors: Arr<T>,
    pub eos_position: usize,
    pub learnable_mask: Vec<bool>,
}

/// A vector in the shared image/text space.
#[derive(Debug, Clone)]
pub struct JointEmbedding<T> {
    /// (d_joint,)
    pub vector: Array1<T>,
    pub normalized: bool,
}

impl<T: Scalar> JointEmbedding<T> {
    /// Unit-norm check at the documented 1e-5 tolerance.
    pub fn verify(&self) -> Result<(), BackboneError> {
        if !self.normalized {
            return Err(BackboneError::NotNormalized);
        }
        let norm = self
            .vector
            .fold(T::zero(), |acc, &v| acc + v * v)
            .sqrt()
            .to_f64()
            .unwrap_or(f64::NAN);
        if (norm - 1.0).abs() > 1e-5 {
            return Err(BackboneError::NotNormalized);
        }
        Ok(())
    }
}

/// Frozen dual encoder plus everything needed to drive it.
pub struct BackboneBundle<T: Scalar> {
    pub geometry: BackboneGeometry,
    pub tokenizer: Tokenizer,
    pub preprocess: PreprocessSpec,
    pub text: TextTower<T>,
    pub vision: VisionTower<T>,
    /// Natural log of the similarity temperature τ, frozen.
    pub logit_scale_ln: T,
}

impl<T: Scalar> BackboneBundle<T> {
    /// The similarity temperature τ.
    pub fn tau(&self) -> T {
        self.logit_scale_ln.exp()
    }

    /// Content digest over every weight tensor (name-sorted, bit-exact).
    pub fn digest(&self) -> String {
        digest_tensors(self.named_tensors().into_iter())
    }

    /// Embedding-table lookup for a token sequence.
    pub fn embed_tokens(&self, seq: &TokenSequence) -> Result<EmbeddedPrompt<T>, BackboneError> {
        seq.validate(&self.tokenizer)?;
        let table = rsprompt_tensor::as2(&self.text.token_embedding);
        let mut rows = Array2::<T>::zeros((CONTEXT_LEN, self.geometry.d_text));
        for (i, &id) in seq.ids.iter().enumerate() {
            if id as usize >= self.geometry.vocab_size {
                return Err(BackboneError::InvalidToken {
                    id,
                    vocab: self.geometry.vocab_size,
                });
            }
            rows.row_mut(i).assign(&table.row(id as usize));
        }
        Ok(EmbeddedPrompt {
            vectors: rows.into_dyn(),
            eos_position: seq.eos_position,
            learnable_mask: vec![false; CONTEXT_LEN],
        })
    }

    /// Graph-mode text encoding; `rows` must be (77, d_text).
    pub fn encode_text_graph(
        &self,
        g: &mut Graph<T>,
        rows: VarId,
        eos_position: usize,
        deep: &[Injection],
    ) -> Result<VarId, BackboneError> {
        for inj in deep {
            if inj.layer > self.geometry.text_layers {
                return Err(BackboneError::InjectionDepth {
                    layer: inj.layer,
                    layers: self.geometry.text_layers,
                });
            }
        }
        self.text.forward(g, rows, eos_position, deep)
    }

    /// Baseline text encoding of an embedded prompt (no injections).
    pub fn encode_text(&self, prompt: &EmbeddedPrompt<T>) -> Result<JointEmbedding<T>, BackboneError> {
        let mut g = Graph::new();
        let rows = g.constant(prompt.vectors.clone());
        let feat = self.encode_text_graph(&mut g, rows, prompt.eos_position, &[])?;
        Ok(joint_from_node(&g, feat))
    }

    /// Frozen `[class, patches]` token rows for an image, ready for the
    /// vision tower (pre-norm already applied).
    pub fn image_base_tokens(&self, pixels: &Arr<T>) -> Result<Arr<T>, BackboneError> {
        self.vision.base_tokens(pixels)
    }

    /// Graph-mode image encoding over assembled tokens; `prompt_len` is the
    /// number of appended prompt rows (0 for the baseline path).
    pub fn encode_image_graph(
        &self,
        g: &mut Graph<T>,
        tokens: VarId,
        prompt_len: usize,
        deep: &[Injection],
    ) -> Result<VarId, BackboneError> {
        for inj in deep {
            if inj.layer > self.geometry.vision_layers {
                return Err(BackboneError::InjectionDepth {
                    layer: inj.layer,
                    layers: self.geometry.vision_layers,
                });
            }
        }
        self.vision.forward(g, tokens, prompt_len, deep)
    }

    /// Baseline image encoding (no injections).
    pub fn encode_image(&self, pixels: &Arr<T>) -> Result<JointEmbedding<T>, BackboneError> {
        let base = self.image_base_tokens(pixels)?;
        let mut g = Graph::new();
        let tokens = g.constant(base);
        let feat = self.encode_image_graph(&mut g, tokens, 0, &[])?;
        Ok(joint_from_node(&g, feat))
    }

    /// Baseline image encoding without the final normalization (the joint
    /// feature as projected).
    pub fn encode_image_raw(&self, pixels: &Arr<T>) -> Result<JointEmbedding<T>, BackboneError> {
        let base = self.image_base_tokens(pixels)?;
        let mut g = Graph::new();
        let tokens = g.constant(base);
        let feat = self.vision.forward_raw(&mut g, tokens, 0, &[])?;
        let v = rsprompt_tensor::as2(g.value(feat));
        Ok(JointEmbedding {
            vector: v.row(0).to_owned(),
            normalized: false,
        })
    }

    /// Order-stable parallel batch encoding of images.
    pub fn encode_images(&self, batch: &[Arr<T>]) -> Result<Vec<JointEmbedding<T>>, BackboneError> {
        use rayon::prelude::*;
        batch
            .par_iter()
            .map(|px| self.encode_image(px))
            .collect::<Result<Vec<_>, _>>()
    }

    fn named_tensors(&self) -> Vec<(String, Arr<T>)> {
        let mut out: Vec<(String, Arr<T>)> = Vec::new();
        out.push(("text.token_embedding".into(), self.text.token_embedding.clone()));
        out.push((
            "text.positional_embedding".into(),
            self.text.positional_embedding.clone(),
        ));
        push_blocks(&mut out, "text", &self.text.blocks);
        out.push(("text.ln_final.weight".into(), self.text.ln_final_g.clone()));
        out.push(("text.ln_final.bias".into(), self.text.ln_final_b.clone()));
        out.push(("text.projection".into(), self.text.projection.clone()));
        out.push(("visual.patch_weight".into(), self.vision.patch_weight.clone()));
        out.push((
            "visual.class_embedding".into(),
            self.vision.class_embedding.clone(),
        ));
        out.push((
            "visual.positional_embedding".into(),
            self.vision.positional_embedding.clone(),
        ));
        out.push(("visual.ln_pre.weight".into(), self.vision.ln_pre_g.clone()));
        out.push(("visual.ln_pre.bias".into(), self.vision.ln_pre_b.clone()));
        push_blocks(&mut out, "visual", &self.vision.blocks);
        out.push(("visual.ln_post.weight".into(), self.vision.ln_post_g.clone()));
        out.push(("visual.ln_post.bias".into(), self.vision.ln_post_b.clone()));
        out.push(("visual.projection".into(), self.vision.projection.clone()));
        out.push((
            "logit_scale".into(),
            rsprompt_tensor::scalar(self.logit_scale_ln),
        ));
        out
    }

    /// Deterministic random bundle with the micro geometry. Same interface
    /// as the pretrained bundle; used by gradient and property tests.
    pub fn micro(seed: u64) -> Self {
        let geom = BackboneGeometry::micro();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let normal = |rng: &mut ChaCha12Rng, r: usize, c: usize, sigma: f64| -> Arr<T> {
            Array2::from_shape_fn((r, c), |_| T::from_f64_lossy(gauss(rng) * sigma)).into_dyn()
        };
        let ones = |n: usize| -> Arr<T> { Array1::from_elem(n, T::one()).into_dyn() };
        let zeros1 = |n: usize| -> Arr<T> { Array1::from_elem(n, T::zero()).into_dyn() };

        let mk_blocks = |rng: &mut ChaCha12Rng, d: usize, layers: usize| -> Vec<Block<T>> {
            let sigma = 1.0 / (d as f64).sqrt();
            (0..layers)
                .map(|_| Block {
                    ln1_g: ones(d),
                    ln1_b: zeros1(d),
                    attn_qkv_w: normal(rng, d, 3 * d, sigma),
                    attn_qkv_b: normal(rng, 1, 3 * d, 0.01),
                    attn_out_w: normal(rng, d, d, sigma),
                    attn_out_b: normal(rng, 1, d, 0.01),
                    ln2_g: ones(d),
                    ln2_b: zeros1(d),
                    mlp_fc_w: normal(rng, d, 4 * d, sigma),
                    mlp_fc_b: normal(rng, 1, 4 * d, 0.01),
                    mlp_proj_w: normal(rng, 4 * d, d, sigma / 2.0),
                    mlp_proj_b: normal(rng, 1, d, 0.01),
                })
                .collect()
        };

        let dt = geom.d_text;
        let dv = geom.d_vision;
        let text = TextTower {
            token_embedding: normal(&mut rng, geom.vocab_size, dt, 0.02),
            positional_embedding: normal(&mut rng, geom.context_len, dt, 0.01),
            blocks: mk_blocks(&mut rng, dt, geom.text_layers),
            heads: geom.text_heads,
            ln_final_g: ones(dt),
            ln_final_b: zeros1(dt),
            projection: normal(&mut rng, dt, geom.d_joint, 1.0 / (dt as f64).sqrt()),
        };
        let vision = VisionTower {
            patch_weight: normal(&mut rng, 3 * geom.patch * geom.patch, dv, 0.02),
            class_embedding: normal(&mut rng, 1, dv, 0.02),
            positional_embedding: normal(&mut rng, 1 + geom.n_patches(), dv, 0.01),
            ln_pre_g: ones(dv),
            ln_pre_b: zeros1(dv),
            blocks: mk_blocks(&mut rng, dv, geom.vision_layers),
            heads: geom.vision_heads,
            ln_post_g: ones(dv),
            ln_post_b: zeros1(dv),
            projection: normal(&mut rng, dv, geom.d_joint, 1.0 / (dv as f64).sqrt()),
            patch: geom.patch,
            image_size: geom.image_size,
        };
        BackboneBundle {
            geometry: geom,
            tokenizer: Tokenizer::micro(),
            preprocess: PreprocessSpec::micro(),
            text,
            vision,
            logit_scale_ln: T::from_f64_lossy(10.0f64.ln()),
        }
    }

    /// Save as a flat named-tensor archive (f32 storage).
    pub fn save_archive(&self, path: &Path) -> Result<(), BackboneError> {
        let mut archive = TensorArchive::new();
        for (name, tensor) in self.named_tensors() {
            archive.insert(&name, tensor.mapv(|v| v.to_f64().unwrap() as f32));
        }
        archive
            .metadata
            .insert("geometry".into(), serde_json::to_value(&self.geometry)?);
        archive
            .metadata
            .insert("preprocess".into(), serde_json::to_value(&self.preprocess)?);
        archive.write_to(path)
    }
}

impl BackboneBundle<f32> {
    /// Load weights from an archive plus its metadata document. The metadata
    /// names the geometry, preprocessing spec, and the merges asset (resolved
    /// relative to the metadata file).
    pub fn load(archive_path: &Path, metadata_path: &Path) -> Result<Self, BackboneError> {
        let meta: BundleMetadata =
            serde_json::from_str(&std::fs::read_to_string(metadata_path)?)?;
        let archive = TensorArchive::read_from(archive_path)?;
        let merges_path = metadata_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&meta.merges);
        let merges = std::fs::read_to_string(&merges_path)?;
        let tokenizer = Tokenizer::from_merges_text(&merges, meta.geometry.vocab_size)?;
        Self::from_archive(&archive, meta.geometry, tokenizer, meta.preprocess)
    }

    /// Assemble a bundle from an already-read archive, validating every
    /// tensor name and shape against the geometry.
    pub fn from_archive(
        archive: &TensorArchive,
        geometry: BackboneGeometry,
        tokenizer: Tokenizer,
        preprocess: PreprocessSpec,
    ) -> Result<Self, BackboneError> {
        let g = &geometry;
        let dt = g.d_text;
        let dv = g.d_vision;
        let take = |name: &str, shape: &[usize]| -> Result<Arr<f32>, BackboneError> {
            Ok(archive.get_shaped(name, shape)?.clone())
        };
        let blocks = |prefix: &str, d: usize, layers: usize| -> Result<Vec<Block<f32>>, BackboneError> {
            (0..layers)
                .map(|i| {
                    Ok(Block {
                        ln1_g: take(&format!("{prefix}.blocks.{i}.ln_1.weight"), &[d])?,
                        ln1_b: take(&format!("{prefix}.blocks.{i}.ln_1.bias"), &[d])?,
                        attn_qkv_w: take(&format!("{prefix}.blocks.{i}.attn.qkv_weight"), &[d, 3 * d])?,
                        attn_qkv_b: take(&format!("{prefix}.blocks.{i}.attn.qkv_bias"), &[1, 3 * d])?,
                        attn_out_w: take(&format!("{prefix}.blocks.{i}.attn.out_weight"), &[d, d])?,
                        attn_out_b: take(&format!("{prefix}.blocks.{i}.attn.out_bias"), &[1, d])?,
                        ln2_g: take(&format!("{prefix}.blocks.{i}.ln_2.weight"), &[d])?,
                        ln2_b: take(&format!("{prefix}.blocks.{i}.ln_2.bias"), &[d])?,
                        mlp_fc_w: take(&format!("{prefix}.blocks.{i}.mlp.fc_weight"), &[d, 4 * d])?,
                        mlp_fc_b: take(&format!("{prefix}.blocks.{i}.mlp.fc_bias"), &[1, 4 * d])?,
                        mlp_proj_w: take(&format!("{prefix}.blocks.{i}.mlp.proj_weight"), &[4 * d, d])?,
                        mlp_proj_b: take(&format!("{prefix}.blocks.{i}.mlp.proj_bias"), &[1, d])?,
                    })
                })
                .collect()
        };
        let n_pos = 1 + g.n_patches();
        let bundle = BackboneBundle {
            text: TextTower {
                token_embedding: take("text.token_embedding", &[g.vocab_size, dt])?,
                positional_embedding: take("text.positional_embedding", &[g.context_len, dt])?,
                blocks: blocks("text", dt, g.text_layers)?,
                heads: g.text_heads,
                ln_final_g: take("text.ln_final.weight", &[dt])?,
                ln_final_b: take("text.ln_final.bias", &[dt])?,
                projection: take("text.projection", &[dt, g.d_joint])?,
            },
            vision: VisionTower {
                patch_weight: take("visual.patch_weight", &[3 * g.patch * g.patch, dv])?,
                class_embedding: take("visual.class_embedding", &[1, dv])?,
                positional_embedding: take("visual.positional_embedding", &[n_pos, dv])?,
                ln_pre_g: take("visual.ln_pre.weight", &[dv])?,
                ln_pre_b: take("visual.ln_pre.bias", &[dv])?,
                blocks: blocks("visual", dv, g.vision_layers)?,
                heads: g.vision_heads,
                ln_post_g: take("visual.ln_post.weight", &[dv])?,
                ln_post_b: take("visual.ln_post.bias", &[dv])?,
                projection: take("visual.projection", &[dv, g.d_joint])?,
                patch: g.patch,
                image_size: g.image_size,
            },
            logit_scale_ln: *archive
                .get_shaped("logit_scale", &[])?
                .first()
                .expect("0-d tensor has one element"),
            geometry,
            tokenizer,
            preprocess,
        };
        Ok(bundle)
    }

    /// Cast every weight to f64 (used by gradient-check fixtures).
    pub fn to_f64(&self) -> BackboneBundle<f64> {
        let cast = |a: &Arr<f32>| a.mapv(|v| v as f64);
        let cast_blocks = |blocks: &[Block<f32>]| -> Vec<Block<f64>> {
            blocks
                .iter()
                .map(|b| Block {
                    ln1_g: cast(&b.ln1_g),
                    ln1_b: cast(&b.ln1_b),
                    attn_qkv_w: cast(&b.attn_qkv_w),
                    attn_qkv_b: cast(&b.attn_qkv_b),
                    attn_out_w: cast(&b.attn_out_w),
                    attn_out_b: cast(&b.attn_out_b),
                    ln2_g: cast(&b.ln2_g),
                    ln2_b: cast(&b.ln2_b),
                    mlp_fc_w: cast(&b.mlp_fc_w),
                    mlp_fc_b: cast(&b.mlp_fc_b),
                    mlp_proj_w: cast(&b.mlp_proj_w),
                    mlp_proj_b: cast(&b.mlp_proj_b),
                })
                .collect()
        };
        BackboneBundle {
            geometry: self.geometry.clone(),
            tokenizer: self.tokenizer.clone(),
            preprocess: self.preprocess.clone(),
            text: TextTower {
                token_embedding: cast(&self.text.token_embedding),
                positional_embedding: cast(&self.text.positional_embedding),
                blocks: cast_blocks(&self.text.blocks),
                heads: self.text.heads,
                ln_final_g: cast(&self.text.ln_final_g),
                ln_final_b: cast(&self.text.ln_final_b),
                projection: cast(&self.text.projection),
            },
            vision: VisionTower {
                patch_weight: cast(&self.vision.patch_weight),
                class_embedding: cast(&self.vision.class_embedding),
                positional_embedding: cast(&self.vision.positional_embedding),
                ln_pre_g: cast(&self.vision.ln_pre_g),
                ln_pre_b: cast(&self.vision.ln_pre_b),
                blocks: cast_blocks(&self.vision.blocks),
                heads: self.vision.heads,
                ln_post_g: cast(&self.vision.ln_post_g),
                ln_post_b: cast(&self.vision.ln_post_b),
                projection: cast(&self.vision.projection),
                patch: self.vision.patch,
                image_size: self.vision.image_size,
            },
            logit_scale_ln: self.logit_scale_ln as f64,
        }
    }
}

fn push_blocks<T: Scalar>(out: &mut Vec<(String, Arr<T>)>, prefix: &str, blocks: &[Block<T>]) {
    for (i, b) in blocks.iter().enumerate() {
        out.push((format!("{prefix}.blocks.{i}.ln_1.weight"), b.ln1_g.clone()));
        out.push((format!("{prefix}.blocks.{i}.ln_1.bias"), b.ln1_b.clone()));
        out.push((format!("{prefix}.blocks.{i}.attn.qkv_weight"), b.attn_qkv_w.clone()));
        out.push((format!("{prefix}.blocks.{i}.attn.qkv_bias"), b.attn_qkv_b.clone()));
        out.push((format!("{prefix}.blocks.{i}.attn.out_weight"), b.attn_out_w.clone()));
        out.push((format!("{prefix}.blocks.{i}.attn.out_bias"), b.attn_out_b.clone()));
        out.push((format!("{prefix}.blocks.{i}.ln_2.weight"), b.ln2_g.clone()));
        out.push((format!("{prefix}.blocks.{i}.ln_2.bias"), b.ln2_b.clone()));
        out.push((format!("{prefix}.blocks.{i}.mlp.fc_weight"), b.mlp_fc_w.clone()));
        out.push((format!("{prefix}.blocks.{i}.mlp.fc_bias"), b.mlp_fc_b.clone()));
        out.push((format!("{prefix}.blocks.{i}.mlp.proj_weight"), b.mlp_proj_w.clone()));
        out.push((format!("{prefix}.blocks.{i}.mlp.proj_bias"), b.mlp_proj_b.clone()));
    }
}

/// Metadata document sitting next to a weight archive.
#[derive(Debug, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub geometry: BackboneGeometry,
    pub preprocess: PreprocessSpec,
    /// Merges asset path, relative to this document.
    pub merges: String,
}

/// Extract a normalized joint embedding from a finished graph node (1×d).
pub fn joint_from_node<T: Scalar>(g: &Graph<T>, id: VarId) -> JointEmbedding<T> {
    let v = rsprompt_tensor::as2(g.value(id));
    JointEmbedding {
        vector: v.row(0).to_owned(),
        normalized: true,
    }
}

/// Scaled cosine-similarity logits: `logits[i][c] = τ · <image_i, class_c>`.
/// All inputs must be normalized.
pub fn similarity_logits<T: Scalar>(
    images: &[JointEmbedding<T>],
    classes: &[JointEmbedding<T>],
    tau: T,
) -> Result<Array2<T>, BackboneError> {
    if images.is_empty() || classes.is_empty() {
        return Err(BackboneError::EmptyInput);
    }
    for e in images.iter().chain(classes.iter()) {
        e.verify()?;
    }
    let mut out = Array2::<T>::zeros((images.len(), classes.len()));
    for (i, img) in images.iter().enumerate() {
        for (c, cls) in classes.iter().enumerate() {
            out[(i, c)] = img.vector.dot(&cls.vector) * tau;
        }
    }
    Ok(out)
}

/// Standard normal via Box-Muller over the rng's uniform output.
fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
