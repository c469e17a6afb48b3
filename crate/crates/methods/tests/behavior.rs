//! Method behavior on the micro backbone: zero-step equivalences,
//! conditioning, coupling, self-regulation identities, gradient isolation.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rsprompt_backbone::{similarity_logits, BackboneBundle};
use rsprompt_methods::forward::{cocoop_forward, coop_forward};
use rsprompt_methods::{
    build_zeroshot_classifier, forward, loss, textual_diversity_targets, ForwardOutput,
    FrozenTargets, ImageBatch, Method, MethodConfig, PromptState,
};
use rsprompt_tensor::{Arr, Graph};

fn micro32() -> BackboneBundle<f32> {
    BackboneBundle::micro(21)
}

fn vocab() -> Vec<String> {
    vec!["photo".to_string(), "an".to_string()]
}

fn images(n: usize, seed: u64) -> Vec<Arr<f32>> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            ndarray::Array3::from_shape_fn((3, 16, 16), |_| rng.random_range(-1.0f32..1.0))
                .into_dyn()
        })
        .collect()
}

fn micro_cfg(method: Method, bundle: &BackboneBundle<f32>) -> MethodConfig {
    let mut cfg = MethodConfig::defaults_for(method);
    cfg.prompt_depth = cfg.prompt_depth.min(bundle.geometry.text_layers);
    cfg
}

#[test]
fn coop_at_init_equals_zeroshot_with_template() {
    let bundle = micro32();
    let vocab = vocab();
    let cfg = micro_cfg(Method::Coop, &bundle);
    let state = PromptState::init(Method::Coop, &bundle, &cfg, &vocab, 7).unwrap();

    let pixels = images(32, 99);
    let batch = ImageBatch::prepare(&bundle, &pixels, Method::Coop).unwrap();
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let logits_var = coop_forward(&mut g, &bundle, &bound, &batch, &vocab).unwrap();
    let coop_logits = rsprompt_tensor::as2(g.value(logits_var)).to_owned();
    assert_eq!(coop_logits.dim(), (32, 2));

    let bank = build_zeroshot_classifier(&bundle, &vocab, "a photo of a {}").unwrap();
    let img_feats = bundle.encode_images(&pixels).unwrap();
    let zs_logits = similarity_logits(&img_feats, &bank.embeddings, bundle.tau()).unwrap();

    let max_diff = coop_logits
        .iter()
        .zip(zs_logits.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(max_diff < 1e-5, "zero-step equivalence broken: {max_diff}");
}

#[test]
fn coop_init_template_length_enforced() {
    let bundle = micro32();
    let mut cfg = micro_cfg(Method::Coop, &bundle);
    cfg.init_template = "a photo".into(); // 2 tokens, M = 4
    let err = PromptState::init(Method::Coop, &bundle, &cfg, &vocab(), 7);
    assert!(err.is_err());
}

#[test]
fn coop_learnable_positions_are_context_only() {
    let bundle = micro32();
    let cfg = micro_cfg(Method::Coop, &bundle);
    let state = PromptState::init(Method::Coop, &bundle, &cfg, &vocab(), 7).unwrap();
    assert_eq!(state.context.shape(), &[4, 32]);
    // initialization-by-copy from the embedding table
    let body = bundle.tokenizer.encode_body("a photo of a");
    let table = rsprompt_tensor::as2(&bundle.text.token_embedding);
    let ctx = rsprompt_tensor::as2(&state.context);
    for (i, &id) in body.iter().enumerate() {
        assert_eq!(ctx.row(i), table.row(id as usize));
    }
}

#[test]
fn cocoop_with_zeroed_meta_net_equals_coop_exactly() {
    let bundle = micro32();
    let vocab = vocab();
    let cfg = micro_cfg(Method::Cocoop, &bundle);
    let mut state = PromptState::init(Method::Cocoop, &bundle, &cfg, &vocab, 7).unwrap();
    {
        let meta = state.meta.as_mut().unwrap();
        meta.w1.fill(0.0);
        meta.b1.fill(0.0);
        meta.w2.fill(0.0);
        meta.b2.fill(0.0);
    }
    let pixels = images(4, 5);
    let batch = ImageBatch::prepare(&bundle, &pixels, Method::Cocoop).unwrap();

    let mut g1 = Graph::new();
    let b1 = state.bind(&mut g1);
    let cocoop = cocoop_forward(&mut g1, &bundle, &b1, &batch, &vocab).unwrap();

    let coop_state = PromptState::init(Method::Coop, &bundle, &cfg, &vocab, 7).unwrap();
    let mut g2 = Graph::new();
    let b2 = coop_state.bind(&mut g2);
    let coop = coop_forward(&mut g2, &bundle, &b2, &batch, &vocab).unwrap();

    assert_eq!(g1.value(cocoop), g2.value(coop));
}

#[test]
fn cocoop_conditioning_varies_and_is_permutation_equivariant() {
    let bundle = micro32();
    let vocab = vocab();
    let cfg = micro_cfg(Method::Cocoop, &bundle);
    let state = PromptState::init(Method::Cocoop, &bundle, &cfg, &vocab, 7).unwrap();
    let pixels = images(4, 5);
    let batch = ImageBatch::prepare(&bundle, &pixels, Method::Cocoop).unwrap();

    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let logits = cocoop_forward(&mut g, &bundle, &bound, &batch, &vocab).unwrap();
    let base = rsprompt_tensor::as2(g.value(logits)).to_owned();

    // two different images get different logit rows (instance conditioning)
    assert_ne!(base.row(0), base.row(1));

    // permuting the batch permutes the rows identically
    let perm = [2usize, 0, 3, 1];
    let permuted_pixels: Vec<Arr<f32>> = perm.iter().map(|&i| pixels[i].clone()).collect();
    let pbatch = ImageBatch::prepare(&bundle, &permuted_pixels, Method::Cocoop).unwrap();
    let mut g2 = Graph::new();
    let bound2 = state.bind(&mut g2);
    let plogits = cocoop_forward(&mut g2, &bundle, &bound2, &pbatch, &vocab).unwrap();
    let permuted = rsprompt_tensor::as2(g2.value(plogits)).to_owned();
    for (out_row, &src) in perm.iter().enumerate() {
        assert_eq!(permuted.row(out_row), base.row(src));
    }
}

#[test]
fn maple_vision_prompts_are_all_derived() {
    let bundle = micro32();
    let cfg = micro_cfg(Method::Maple, &bundle);
    let state = PromptState::init(Method::Maple, &bundle, &cfg, &vocab(), 7).unwrap();
    assert!(state.vision_prompts.is_empty());
    assert_eq!(state.coupling.len(), cfg.prompt_depth);
    assert_eq!(state.context.shape(), &[2, 32]);
    // init keeps the trailing template tokens ("of", "a")
    let body = bundle.tokenizer.encode_body("a photo of a");
    let table = rsprompt_tensor::as2(&bundle.text.token_embedding);
    let ctx = rsprompt_tensor::as2(&state.context);
    assert_eq!(ctx.row(0), table.row(body[2] as usize));
    assert_eq!(ctx.row(1), table.row(body[3] as usize));
}

#[test]
fn maple_coupling_controls_vision_prompts() {
    let bundle = micro32();
    let cfg = micro_cfg(Method::Maple, &bundle);
    let mut state = PromptState::init(Method::Maple, &bundle, &cfg, &vocab(), 7).unwrap();

    // zeroed coupling yields zero vision prompts at every layer
    for c in &mut state.coupling {
        c.weight.fill(0.0);
        c.bias.fill(0.0);
    }
    let vps = rsprompt_methods::infer::resolved_vision_prompts(&state);
    assert_eq!(vps.len(), cfg.prompt_depth);
    assert!(vps.iter().all(|vp| vp.iter().all(|&v| v == 0.0)));
    // coupled width is d_vision
    assert!(vps.iter().all(|vp| vp.shape()[1] == bundle.geometry.d_vision));

    // perturbing the layer-2 text prompt moves the layer-2 vision prompt
    let mut state2 = PromptState::init(Method::Maple, &bundle, &cfg, &vocab(), 7).unwrap();
    let before = rsprompt_methods::infer::resolved_vision_prompts(&state2);
    state2.deep_text[0] = state2.deep_text[0].mapv(|v| v + 0.5);
    let after = rsprompt_methods::infer::resolved_vision_prompts(&state2);
    assert_eq!(before[0], after[0], "layer-1 prompt untouched");
    assert_ne!(before[1], after[1], "layer-2 prompt follows its text prompt");
}

#[test]
fn promptsrc_identity_gives_zero_agreement_and_ce_total() {
    // force prompted features/logits equal to the frozen ones and check the
    // composite loss degenerates to plain cross-entropy
    let mut g = Graph::<f64>::new();
    let feats = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 7 + j) as f64 * 0.13).sin());
    let text = Array2::from_shape_fn((2, 4), |(i, j)| ((i + j) as f64 * 0.29).cos());
    let logits = Array2::from_shape_fn((3, 2), |(i, j)| (i as f64 - j as f64) * 0.4);

    let prompted_img = g.leaf(feats.clone().into_dyn());
    let frozen_img = g.constant(feats.into_dyn());
    let prompted_txt = g.leaf(text.clone().into_dyn());
    let frozen_txt = g.constant(text.into_dyn());
    let prompted_logits = g.leaf(logits.clone().into_dyn());
    let frozen_logits = g.constant(logits.clone().into_dyn());

    let out = ForwardOutput::SelfRegulating(rsprompt_methods::PromptsrcOutputs {
        logits: prompted_logits,
        frozen_logits,
        image_pair: (prompted_img, frozen_img),
        text_pair: (prompted_txt, frozen_txt),
    });
    let cfg = MethodConfig::defaults_for(Method::Promptsrc);
    let labels = vec![0usize, 1, 0];
    let (total, parts) = loss(&mut g, &out, &labels, &cfg).unwrap();
    assert_eq!(parts.l1_image, 0.0);
    assert_eq!(parts.l1_text, 0.0);
    assert_eq!(parts.kl_logits, 0.0);
    assert_eq!(parts.total, parts.cross_entropy);

    // oracle CE on the same logits
    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row: Vec<f64> = logits.row(i).to_vec();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        ce -= (logits[(i, y)] - m) - z.ln();
    }
    ce /= labels.len() as f64;
    assert!((g.value(total).first().unwrap() - ce).abs() < 1e-12);
}

#[test]
fn promptsrc_composite_loss_matches_hand_computed_sum() {
    // fixed small tensors with known gaps; every term reproduced by a
    // stand-alone arithmetic oracle
    let mut g = Graph::<f64>::new();
    let p_img = Array2::from_shape_vec((2, 3), vec![0.2, -0.4, 0.6, 1.0, 0.1, -0.3]).unwrap();
    let f_img = Array2::from_shape_vec((2, 3), vec![0.0, -0.1, 0.9, 0.7, 0.4, -0.2]).unwrap();
    let p_txt = Array2::from_shape_vec((2, 3), vec![0.5, 0.5, 0.0, -0.5, 0.25, 0.3]).unwrap();
    let f_txt = Array2::from_shape_vec((2, 3), vec![0.4, 0.6, -0.1, -0.3, 0.05, 0.4]).unwrap();
    let p_log = Array2::from_shape_vec((2, 2), vec![1.2, -0.7, -0.6, 0.9]).unwrap();
    let f_log = Array2::from_shape_vec((2, 2), vec![0.8, -0.2, -0.1, 0.5]).unwrap();
    let labels = vec![0usize, 1];

    let out = ForwardOutput::SelfRegulating(rsprompt_methods::PromptsrcOutputs {
        logits: g.leaf(p_log.clone().into_dyn()),
        frozen_logits: g.constant(f_log.clone().into_dyn()),
        image_pair: (g.leaf(p_img.clone().into_dyn()), g.constant(f_img.clone().into_dyn())),
        text_pair: (g.leaf(p_txt.clone().into_dyn()), g.constant(f_txt.clone().into_dyn())),
    });
    let cfg = MethodConfig::defaults_for(Method::Promptsrc);
    let (total, parts) = loss(&mut g, &out, &labels, &cfg).unwrap();

    let softmax = |row: &[f64]| -> Vec<f64> {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        ce -= softmax(&p_log.row(i).to_vec())[y].ln();
    }
    ce /= 2.0;
    let l1 = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
    };
    let mut kl = 0.0;
    for i in 0..2 {
        let p = softmax(&p_log.row(i).to_vec());
        let q = softmax(&f_log.row(i).to_vec());
        kl += p
            .iter()
            .zip(q.iter())
            .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
            .sum::<f64>();
    }
    kl /= 2.0;
    let expect = ce + 10.0 * l1(&p_img, &f_img) + 25.0 * l1(&p_txt, &f_txt) + kl;
    assert!((parts.cross_entropy - ce).abs() < 1e-12);
    assert!((parts.l1_image - l1(&p_img, &f_img)).abs() < 1e-12);
    assert!((parts.l1_text - l1(&p_txt, &f_txt)).abs() < 1e-12);
    assert!((parts.kl_logits - kl).abs() < 1e-12);
    assert!((g.value(total).first().unwrap() - expect).abs() < 1e-12);
}

#[test]
fn promptsrc_frozen_logits_independent_of_state() {
    let bundle = micro32();
    let vocab = vocab();
    let cfg = micro_cfg(Method::Promptsrc, &bundle);
    let pixels = images(3, 11);
    let batch = ImageBatch::prepare(&bundle, &pixels, Method::Promptsrc).unwrap();
    let templates = vec!["a photo of a {}".to_string()];
    let frozen = FrozenTargets {
        text_targets: textual_diversity_targets(&bundle, &vocab, &templates).unwrap(),
    };
    let run = |seed: u64| -> Array2<f32> {
        let state = PromptState::init(Method::Promptsrc, &bundle, &cfg, &vocab, seed).unwrap();
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
            Some(&frozen),
        )
        .unwrap();
        match out {
            ForwardOutput::SelfRegulating(o) => {
                rsprompt_tensor::as2(g.value(o.frozen_logits)).to_owned()
            }
            _ => unreachable!(),
        }
    };
    assert_eq!(run(1), run(2));
}

#[test]
fn gradients_reach_exactly_the_learnable_tensors() {
    let bundle = micro32();
    let vocab = vocab();
    let pixels = images(2, 3);
    let labels = vec![0usize, 1];
    for method in [Method::Coop, Method::Cocoop, Method::Maple, Method::Promptsrc] {
        let cfg = micro_cfg(method, &bundle);
        let state = PromptState::init(method, &bundle, &cfg, &vocab, 5).unwrap();
        let batch = ImageBatch::prepare(&bundle, &pixels, method).unwrap();
        let frozen = if method == Method::Promptsrc {
            Some(FrozenTargets {
                text_targets: textual_diversity_targets(
                    &bundle,
                    &vocab,
                    &["a photo of a {}".to_string()],
                )
                .unwrap(),
            })
        } else {
            None
        };
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
        )
        .unwrap();
        let (l, _) = loss(&mut g, &out, &labels, &cfg).unwrap();
        let grads = g.backward(l);
        for (name, var) in &bound.vars {
            let grad = grads.get(*var);
            assert!(grad.is_some(), "{method:?}: no gradient on {name}");
            let nonzero = grad.unwrap().iter().any(|&v| v != 0.0);
            assert!(nonzero, "{method:?}: all-zero gradient on {name}");
        }
    }
}

#[test]
fn vocabulary_mismatch_rejected() {
    let bundle = micro32();
    let cfg = micro_cfg(Method::Coop, &bundle);
    let state = PromptState::init(Method::Coop, &bundle, &cfg, &vocab(), 7).unwrap();
    let other = vec!["is".to_string(), "to".to_string()];
    let pixels = images(2, 3);
    let batch = ImageBatch::prepare(&bundle, &pixels, Method::Coop).unwrap();
    let mut g = Graph::new();
    let bound = state.bind(&mut g);
    let err = forward(
        &mut g, &bundle, &state, &bound, &cfg, &batch, &other, None,
    );
    assert!(matches!(
        err,
        Err(rsprompt_methods::MethodError::VocabularyMismatch)
    ));
}

#[test]
fn zeroshot_bank_counts_and_determinism() {
    let bundle = micro32();
    let vocab: Vec<String> = ["an", "is", "of", "photo", "to"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let b1 = build_zeroshot_classifier(&bundle, &vocab, "a photo of a {}").unwrap();
    assert_eq!(b1.embeddings.len(), 5);
    let b2 = build_zeroshot_classifier(&bundle, &vocab, "a photo of a {}").unwrap();
    for (x, y) in b1.embeddings.iter().zip(b2.embeddings.iter()) {
        assert_eq!(x.vector, y.vector);
    }
    assert!(build_zeroshot_classifier(&bundle, &[], "a {}").is_err());
}
