//! Finite-difference verification of analytic gradients, run on the micro
//! backbone in double precision. Backs the property/verification suites.

use crate::forward::{forward, loss, FrozenTargets, ImageBatch};
use crate::state::{Method, MethodConfig, PromptState};
use crate::templates::textual_diversity_targets;
use crate::MethodError;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rsprompt_backbone::BackboneBundle;
use rsprompt_tensor::{Arr, Graph};

/// Outcome of one finite-difference sweep.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub method: Method,
    pub max_rel_err: f64,
    pub probed_coordinates: usize,
}

/// Which tensors a method's check must probe (the rest still receive
/// analytic gradients; these are the criterion-bearing groups).
fn probe_filter(method: Method) -> fn(&str) -> bool {
    match method {
        Method::Coop => |n: &str| n == "context",
        Method::Cocoop => |n: &str| n.starts_with("meta.") || n == "context",
        Method::Maple => {
            |n: &str| n.starts_with("coupling.") || n.starts_with("deep_text.") || n == "context"
        }
        _ => {
            |n: &str| {
                n == "context" || n.starts_with("deep_text.") || n.starts_with("vision_prompts.")
            }
        }
    }
}

/// Compare analytic gradients of the full training loss against central
/// finite differences (`±eps`) over at least `min_probes` randomly chosen
/// coordinates of the method's learnable tensors.
pub fn finite_difference_check(
    method: Method,
    seed: u64,
    min_probes: usize,
    eps: f64,
) -> Result<GradCheckReport, MethodError> {
    let bundle = BackboneBundle::<f64>::micro(seed);
    let mut cfg = MethodConfig::defaults_for(method);
    // the micro towers are 2 layers deep; keep one deep-prompted layer
    cfg.prompt_depth = cfg.prompt_depth.min(bundle.geometry.text_layers);
    cfg.n_templates = 2;
    let vocab = vec!["photo".to_string(), "an".to_string()];
    let labels = vec![0usize, 1, 0, 1];

    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed);
    let pixels: Vec<Arr<f64>> = (0..labels.len())
        .map(|_| {
            ndarray::Array3::from_shape_fn((3, 16, 16), |_| rng.random_range(-1.0..1.0)).into_dyn()
        })
        .collect();
    let batch = ImageBatch::prepare(&bundle, &pixels, method)?;
    let frozen = if method == Method::Promptsrc {
        let templates = vec!["a photo of a {}".to_string(), "an is of {}".to_string()];
        Some(FrozenTargets {
            text_targets: textual_diversity_targets(&bundle, &vocab, &templates)?,
        })
    } else {
        None
    };
    let state = PromptState::init(method, &bundle, &cfg, &vocab, seed)?;

    let loss_of = |state: &PromptState<f64>| -> Result<f64, MethodError> {
        let mut g = Graph::new();
        let bound = state.bind(&mut g);
        let out = forward(
            &mut g,
            &bundle,
            state,
            &bound,
            &cfg,
            &batch,
            &vocab,
            frozen.as_ref(),
        )?;
        let (l, _) = loss(&mut g, &out, &labels, &cfg)?;
        Ok(*g.value(l).first().unwrap())
    };

    // analytic gradients
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let out = forward(
        &mut g,
        &bundle,
        &state,
        &bound,
        &cfg,
        &batch,
        &vocab,
        frozen.as_ref(),
    )?;
    let (l, _) = loss(&mut g, &out, &labels, &cfg)?;
    let grads = g.backward(l);

    let filter = probe_filter(method);
    let targets: Vec<(String, usize)> = state
        .named()
        .into_iter()
        .filter(|(n, _)| filter(n))
        .map(|(n, t)| (n, t.len()))
        .collect();
    // spread the probe budget proportionally over the target tensors,
    // spilling the remainder into whatever still has unprobed coordinates
    let total_capacity: usize = targets.iter().map(|(_, l)| l).sum();
    let want = min_probes.min(total_capacity).max(1);
    let mut alloc: Vec<usize> = targets
        .iter()
        .map(|(_, len)| want * len / total_capacity)
        .collect();
    let mut assigned: usize = alloc.iter().sum();
    while assigned < want {
        let spare = alloc
            .iter()
            .enumerate()
            .filter(|(i, &a)| a < targets[*i].1)
            .max_by_key(|(i, &a)| targets[*i].1 - a)
            .map(|(i, _)| i)
            .expect("capacity remains");
        alloc[spare] += 1;
        assigned += 1;
    }

    let mut max_rel: f64 = 0.0;
    let mut probed = 0usize;
    for ((name, len), n_probe) in targets.iter().zip(alloc) {
        let analytic = grads
            .get(bound.var(name))
            .ok_or_else(|| MethodError::ShapeMismatch(format!("no gradient on {name}")))?
            .clone();
        let mut indices: Vec<usize> = (0..*len).collect();
        // partial Fisher-Yates for a deterministic sample without replacement
        for i in 0..n_probe {
            let j = i + (rng.random_range(0..(*len - i) as u64) as usize);
            indices.swap(i, j);
        }
        for &idx in indices.iter().take(n_probe) {
            let mut plus = state.clone();
            bump(&mut plus, name, idx, eps);
            let mut minus = state.clone();
            bump(&mut minus, name, idx, -eps);
            let numeric = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * eps);
            let a = analytic.as_slice().unwrap()[idx];
            if a.abs() < 1e-9 && numeric.abs() < 1e-9 {
                probed += 1;
                continue;
            }
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((a - numeric).abs() / denom);
            probed += 1;
        }
    }
    Ok(GradCheckReport {
        method,
        max_rel_err: max_rel,
        probed_coordinates: probed,
    })
}

fn bump(state: &mut PromptState<f64>, name: &str, idx: usize, delta: f64) {
    for (n, tensor) in state.named_mut() {
        if n == name {
            tensor.as_slice_mut().unwrap()[idx] += delta;
            return;
        }
    }
    unreachable!("tensor {name} exists");
}
