//! Learnable prompt state and per-method configuration.

use crate::MethodError;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rsprompt_backbone::BackboneBundle;
use rsprompt_tensor::{Arr, Graph, Scalar, VarId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Zeroshot,
    Coop,
    Cocoop,
    Maple,
    Promptsrc,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Zeroshot => "zeroshot",
            Method::Coop => "coop",
            Method::Cocoop => "cocoop",
            Method::Maple => "maple",
            Method::Promptsrc => "promptsrc",
        }
    }

    pub fn parse(s: &str) -> Result<Self, MethodError> {
        match s {
            "zeroshot" => Ok(Method::Zeroshot),
            "coop" => Ok(Method::Coop),
            "cocoop" => Ok(Method::Cocoop),
            "maple" => Ok(Method::Maple),
            "promptsrc" => Ok(Method::Promptsrc),
            other => Err(MethodError::UnknownMethod(other.to_string())),
        }
    }
}

/// Placement of the class-name tokens relative to the learnable context.
/// Only the end-position design is implemented.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassTokenPosition {
    #[default]
    End,
}

/// Gaussian weighting of per-epoch snapshots for self-ensembling.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnsembleConfig {
    pub enabled: bool,
    /// Mean epoch of the Gaussian; mid-training when unset.
    pub mean_epoch: Option<f64>,
    /// Standard deviation in epochs; `epochs / 3.3` when unset.
    pub sigma: Option<f64>,
}

/// Everything tunable about a method besides the optimizer.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MethodConfig {
    /// Learnable text context length M.
    pub context_len: usize,
    /// Prompted layer count J (layers 1..=J carry prompts).
    pub prompt_depth: usize,
    /// Vision prompt length (independent tokens or coupled width).
    pub vision_prompt_len: usize,
    pub init_template: String,
    /// Image-branch agreement weight.
    pub lambda1: f64,
    /// Text-branch agreement weight.
    pub lambda2: f64,
    /// Diversity template count consumed from the template asset.
    pub n_templates: usize,
    pub class_token_position: ClassTokenPosition,
    /// Meta-network bottleneck divisor (hidden = d_joint / divisor).
    pub meta_bottleneck_div: usize,
    /// Std-dev of random prompt initialization.
    pub init_sigma: f64,
    pub ensemble: EnsembleConfig,
}

impl MethodConfig {
    pub fn defaults_for(method: Method) -> Self {
        let base = MethodConfig {
            context_len: 4,
            prompt_depth: 1,
            vision_prompt_len: 0,
            init_template: "a photo of a".into(),
            lambda1: 10.0,
            lambda2: 25.0,
            n_templates: 60,
            class_token_position: ClassTokenPosition::End,
            meta_bottleneck_div: 16,
            init_sigma: 0.02,
            ensemble: EnsembleConfig {
                enabled: false,
                mean_epoch: None,
                sigma: None,
            },
        };
        match method {
            Method::Zeroshot | Method::Coop | Method::Cocoop => base,
            Method::Maple => MethodConfig {
                context_len: 2,
                prompt_depth: 9,
                vision_prompt_len: 2,
                ..base
            },
            Method::Promptsrc => MethodConfig {
                context_len: 4,
                prompt_depth: 9,
                vision_prompt_len: 4,
                ensemble: EnsembleConfig {
                    enabled: true,
                    mean_epoch: None,
                    sigma: None,
                },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), MethodError> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(MethodError::InvalidConfig(
                "agreement weights must be non-negative".into(),
            ));
        }
        if self.n_templates < 1 {
            return Err(MethodError::InvalidConfig(
                "at least one diversity template is required".into(),
            ));
        }
        if self.context_len == 0 || self.prompt_depth == 0 {
            return Err(MethodError::InvalidConfig(
                "context length and prompt depth must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-layer linear map from text-prompt space into vision-prompt space.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<T> {
    /// (d_text, d_vision)
    pub weight: Arr<T>,
    /// (1, d_vision)
    pub bias: Arr<T>,
}

/// Two-affine-layer meta-network producing a per-image context shift.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaNet<T> {
    /// (d_joint, hidden)
    pub w1: Arr<T>,
    /// (1, hidden)
    pub b1: Arr<T>,
    /// (hidden, d_text)
    pub w2: Arr<T>,
    /// (1, d_text)
    pub b2: Arr<T>,
}

/// Every learnable parameter of one method instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptState<T> {
    pub method: Method,
    /// (M, d_text): layer-1 text context.
    pub context: Arr<T>,
    /// Layer-l text prompts for l = 2..=J, each (L, d_text).
    pub deep_text: Vec<Arr<T>>,
    /// Layer-l vision prompts for l = 1..=J, each (Lv, d_vision).
    /// Present only when the method owns independent vision prompts.
    pub vision_prompts: Vec<Arr<T>>,
    /// Layer-l coupling maps for l = 1..=J (coupled prompting only).
    pub coupling: Vec<Coupling<T>>,
    pub meta: Option<MetaNet<T>>,
    pub init_template: String,
    pub seed: u64,
    /// Digest of the class vocabulary the state was initialized against.
    pub vocab_digest: Option<String>,
}

/// Graph handles for every learnable tensor of a bound state.
pub struct BoundState {
    pub vars: BTreeMap<String, VarId>,
}

impl BoundState {
    pub fn var(&self, name: &str) -> VarId {
        self.vars[name]
    }
}

impl<T: Scalar> PromptState<T> {
    /// Initialize for `method` against a backbone. The context takes the
    /// embedding rows of the init template; deeper and vision prompts draw
    /// from a seeded zero-mean Gaussian with `cfg.init_sigma`.
    pub fn init(
        method: Method,
        bundle: &BackboneBundle<T>,
        cfg: &MethodConfig,
        vocab: &[String],
        seed: u64,
    ) -> Result<Self, MethodError> {
        cfg.validate()?;
        if vocab.is_empty() {
            return Err(MethodError::EmptyVocabulary);
        }
        let d_text = bundle.geometry.d_text;
        let d_vision = bundle.geometry.d_vision;
        let d_joint = bundle.geometry.d_joint;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);

        // template-token embeddings for the layer-1 context
        let body = bundle.tokenizer.encode_body(&cfg.init_template);
        let context = match method {
            Method::Zeroshot => Array2::<T>::zeros((0, d_text)).into_dyn(),
            Method::Maple => {
                // init length may exceed the prompt width; keep the trailing
                // tokens (the ones adjacent to the class name)
                if body.len() < cfg.context_len {
                    return Err(MethodError::TemplateLength {
                        expected: cfg.context_len,
                        got: body.len(),
                    });
                }
                embed_rows(bundle, &body[body.len() - cfg.context_len..])
            }
            _ => {
                if body.len() != cfg.context_len {
                    return Err(MethodError::TemplateLength {
                        expected: cfg.context_len,
                        got: body.len(),
                    });
                }
                embed_rows(bundle, &body)
            }
        };

        let deep_layers = cfg.prompt_depth.saturating_sub(1);
        let gauss = |rng: &mut ChaCha12Rng, r: usize, c: usize| -> Arr<T> {
            Array2::from_shape_fn((r, c), |_| {
                T::from_f64_lossy(normal_sample(rng) * cfg.init_sigma)
            })
            .into_dyn()
        };

        let deep_text = match method {
            Method::Maple | Method::Promptsrc => (0..deep_layers)
                .map(|_| gauss(&mut rng, cfg.context_len, d_text))
                .collect(),
            _ => vec![],
        };
        let vision_prompts = match method {
            Method::Promptsrc => (0..cfg.prompt_depth)
                .map(|_| gauss(&mut rng, cfg.vision_prompt_len, d_vision))
                .collect(),
            _ => vec![],
        };
        let coupling = match method {
            Method::Maple => (0..cfg.prompt_depth)
                .map(|_| Coupling {
                    weight: gauss(&mut rng, d_text, d_vision),
                    bias: Array2::<T>::zeros((1, d_vision)).into_dyn(),
                })
                .collect(),
            _ => vec![],
        };
        let meta = match method {
            Method::Cocoop => {
                let hidden = (d_joint / cfg.meta_bottleneck_div).max(1);
                Some(MetaNet {
                    w1: gauss(&mut rng, d_joint, hidden),
                    b1: Array2::<T>::zeros((1, hidden)).into_dyn(),
                    w2: gauss(&mut rng, hidden, d_text),
                    b2: Array2::<T>::zeros((1, d_text)).into_dyn(),
                })
            }
            _ => None,
        };

        Ok(PromptState {
            method,
            context,
            deep_text,
            vision_prompts,
            coupling,
            meta,
            init_template: cfg.init_template.clone(),
            seed,
            vocab_digest: Some(vocab_digest(vocab)),
        })
    }

    /// Named views of every learnable tensor, in a stable order.
    pub fn named(&self) -> Vec<(String, &Arr<T>)> {
        let mut out: Vec<(String, &Arr<T>)> = Vec::new();
        out.push(("context".into(), &self.context));
        for (i, t) in self.deep_text.iter().enumerate() {
            out.push((format!("deep_text.{}", i + 2), t));
        }
        for (i, t) in self.vision_prompts.iter().enumerate() {
            out.push((format!("vision_prompts.{}", i + 1), t));
        }
        for (i, c) in self.coupling.iter().enumerate() {
            out.push((format!("coupling.{}.weight", i + 1), &c.weight));
            out.push((format!("coupling.{}.bias", i + 1), &c.bias));
        }
        if let Some(m) = &self.meta {
            out.push(("meta.w1".into(), &m.w1));
            out.push(("meta.b1".into(), &m.b1));
            out.push(("meta.w2".into(), &m.w2));
            out.push(("meta.b2".into(), &m.b2));
        }
        out
    }

    /// Mutable named views, matching [`PromptState::named`] order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Arr<T>)> {
        let mut out: Vec<(String, &mut Arr<T>)> = Vec::new();
        out.push(("context".into(), &mut self.context));
        for (i, t) in self.deep_text.iter_mut().enumerate() {
            out.push((format!("deep_text.{}", i + 2), t));
        }
        for (i, t) in self.vision_prompts.iter_mut().enumerate() {
            out.push((format!("vision_prompts.{}", i + 1), t));
        }
        for (i, c) in self.coupling.iter_mut().enumerate() {
            out.push((format!("coupling.{}.weight", i + 1), &mut c.weight));
            out.push((format!("coupling.{}.bias", i + 1), &mut c.bias));
        }
        if let Some(m) = &mut self.meta {
            out.push(("meta.w1".into(), &mut m.w1));
            out.push(("meta.b1".into(), &mut m.b1));
            out.push(("meta.w2".into(), &mut m.w2));
            out.push(("meta.b2".into(), &mut m.b2));
        }
        out
    }

    /// Register every learnable tensor as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundState {
        let vars = self
            .named()
            .into_iter()
            .map(|(name, tensor)| (name, g.leaf(tensor.clone())))
            .collect();
        BoundState { vars }
    }

    /// Replace tensor values from a named map (shape-checked).
    pub fn assign_named(&mut self, values: &BTreeMap<String, Arr<T>>) -> Result<(), MethodError> {
        for (name, slot) in self.named_mut() {
            let v = values
                .get(&name)
                .ok_or_else(|| MethodError::ShapeMismatch(format!("missing tensor {name}")))?;
            if v.shape() != slot.shape() {
                return Err(MethodError::ShapeMismatch(format!(
                    "{name}: expected {:?}, got {:?}",
                    slot.shape(),
                    v.shape()
                )));
            }
            *slot = v.clone();
        }
        Ok(())
    }

    /// Total learnable scalar count.
    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Digest of a class vocabulary (order-sensitive).
pub fn vocab_digest(vocab: &[String]) -> String {
    rsprompt_backbone::archive::digest_bytes(vocab.join("\u{1f}").as_bytes())
}

fn embed_rows<T: Scalar>(bundle: &BackboneBundle<T>, ids: &[u32]) -> Arr<T> {
    let table = rsprompt_tensor::as2(&bundle.text.token_embedding);
    let mut rows = Array2::<T>::zeros((ids.len(), bundle.geometry.d_text));
    for (i, &id) in ids.iter().enumerate() {
        rows.row_mut(i).assign(&table.row(id as usize));
    }
    rows.into_dyn()
}

/// Standard normal via Box-Muller.
fn normal_sample(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
