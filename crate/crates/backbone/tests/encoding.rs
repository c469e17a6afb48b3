//! Encoder contracts on the micro bundle: determinism, normalization,
//! zero-injection equivalence, similarity logits, archive round-trips.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rsprompt_backbone::{similarity_logits, BackboneBundle, Injection, JointEmbedding};
use rsprompt_tensor::{Arr, Graph};

fn micro() -> BackboneBundle<f32> {
    BackboneBundle::micro(11)
}

fn random_image(seed: u64) -> Arr<f32> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    ndarray::Array3::from_shape_fn((3, 16, 16), |_| rng.random_range(-1.0f32..1.0)).into_dyn()
}

#[test]
fn text_encoding_is_deterministic_and_normalized() {
    let b = micro();
    let seq = b.tokenizer.tokenize("a photo of an");
    let prompt = b.embed_tokens(&seq).unwrap();
    let e1 = b.encode_text(&prompt).unwrap();
    let e2 = b.encode_text(&prompt).unwrap();
    assert_eq!(e1.vector, e2.vector);
    e1.verify().unwrap();
}

#[test]
fn image_encoding_is_deterministic_and_normalized() {
    let b = micro();
    let img = random_image(3);
    let e1 = b.encode_image(&img).unwrap();
    let e2 = b.encode_image(&img).unwrap();
    assert_eq!(e1.vector, e2.vector);
    e1.verify().unwrap();
}

#[test]
fn embed_tokens_lookup_semantics() {
    let b = micro();
    let seq = b.tokenizer.tokenize("a");
    let prompt = b.embed_tokens(&seq).unwrap();
    assert_eq!(prompt.vectors.shape(), &[77, 32]);
    assert!(prompt.learnable_mask.iter().all(|&m| !m));
    // every pad position carries the same embedding row
    let rows = rsprompt_tensor::as2(&prompt.vectors);
    let pad_row = rows.row(seq.eos_position + 1);
    for i in seq.eos_position + 1..77 {
        assert_eq!(rows.row(i), pad_row);
    }
    // identical sequences embed bit-identically
    let again = b.embed_tokens(&seq).unwrap();
    assert_eq!(prompt.vectors, again.vectors);
}

#[test]
fn out_of_vocab_id_rejected() {
    let b = micro();
    let mut seq = b.tokenizer.tokenize("a");
    seq.ids[2] = 9999;
    assert!(b.embed_tokens(&seq).is_err());
}

#[test]
fn zero_width_injection_equals_no_injection() {
    let b = micro();
    let img = random_image(5);
    let base = b.image_base_tokens(&img).unwrap();

    let mut g = Graph::new();
    let t0 = g.constant(base.clone());
    let plain = b.encode_image_graph(&mut g, t0, 0, &[]).unwrap();

    let mut g2 = Graph::new();
    let empty = g2.constant(Array2::<f32>::zeros((0, 32)).into_dyn());
    let t1 = g2.constant(base);
    let joined = g2.concat_rows(&[t1, empty]);
    let with_empty = b.encode_image_graph(&mut g2, joined, 0, &[]).unwrap();

    assert_eq!(g.value(plain), g2.value(with_empty));
}

#[test]
fn deep_injection_depth_checked() {
    let b = micro();
    let img = random_image(5);
    let base = b.image_base_tokens(&img).unwrap();
    let mut g = Graph::new();
    let prompts = g.leaf(Array2::<f32>::zeros((2, 32)).into_dyn());
    let tokens = g.constant(base);
    let joined = g.concat_rows(&[tokens, prompts]);
    let err = b.encode_image_graph(
        &mut g,
        joined,
        2,
        &[Injection {
            layer: 99,
            tokens: prompts,
        }],
    );
    assert!(err.is_err());
}

#[test]
fn similarity_logits_match_dot_product_oracle() {
    // 3 images × 5 classes of hand-written unit vectors in d_joint = 4.
    let unit = |v: [f32; 4]| {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        JointEmbedding {
            vector: ndarray::arr1(&v.map(|x| x / n)),
            normalized: true,
        }
    };
    let images = vec![
        unit([1.0, 0.0, 0.0, 0.0]),
        unit([0.0, 1.0, 1.0, 0.0]),
        unit([0.5, -0.5, 0.25, 1.0]),
    ];
    let classes = vec![
        unit([1.0, 0.0, 0.0, 0.0]),
        unit([0.0, 1.0, 0.0, 0.0]),
        unit([0.0, 0.0, 1.0, 0.0]),
        unit([0.0, 0.0, 0.0, 1.0]),
        unit([1.0, 1.0, 1.0, 1.0]),
    ];
    let tau = 7.5f32;
    let logits = similarity_logits(&images, &classes, tau).unwrap();
    for (i, img) in images.iter().enumerate() {
        for (c, cls) in classes.iter().enumerate() {
            let oracle: f32 = img
                .vector
                .iter()
                .zip(cls.vector.iter())
                .map(|(a, b)| a * b)
                .sum::<f32>()
                * tau;
            assert!((logits[(i, c)] - oracle).abs() < 1e-6);
        }
    }
    // identical unit vectors score exactly τ; orthogonal pairs score 0
    assert!((logits[(0, 0)] - tau).abs() < 1e-6);
    assert!(logits[(0, 1)].abs() < 1e-7);
}

#[test]
fn argmax_invariant_under_tau_rescaling() {
    let b = micro();
    let images: Vec<_> = (0..4)
        .map(|s| b.encode_image(&random_image(s)).unwrap())
        .collect();
    let classes: Vec<_> = ["an", "of", "photo"]
        .iter()
        .map(|w| {
            let seq = b.tokenizer.tokenize(w);
            b.encode_text(&b.embed_tokens(&seq).unwrap()).unwrap()
        })
        .collect();
    let argmax = |m: &Array2<f32>| -> Vec<usize> {
        m.rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            })
            .collect()
    };
    let base = similarity_logits(&images, &classes, 1.0).unwrap();
    for tau in [0.01f32, 0.5, 10.0, 250.0] {
        let scaled = similarity_logits(&images, &classes, tau).unwrap();
        assert_eq!(argmax(&base), argmax(&scaled), "argmax changed at τ={tau}");
    }
}

#[test]
fn unnormalized_inputs_rejected() {
    let bad = JointEmbedding {
        vector: ndarray::arr1(&[3.0f32, 0.0]),
        normalized: true,
    };
    let good = JointEmbedding {
        vector: ndarray::arr1(&[1.0f32, 0.0]),
        normalized: true,
    };
    assert!(similarity_logits(&[bad], &[good.clone()], 1.0).is_err());
    assert!(similarity_logits(&[], &[good], 1.0).is_err());
}

#[test]
fn archive_roundtrip_preserves_digest_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("micro.rsw");
    let b = micro();
    b.save_archive(&path).unwrap();

    let archive = rsprompt_backbone::archive::TensorArchive::read_from(&path).unwrap();
    let reloaded = BackboneBundle::from_archive(
        &archive,
        b.geometry.clone(),
        b.tokenizer.clone(),
        b.preprocess.clone(),
    )
    .unwrap();
    assert_eq!(b.digest(), reloaded.digest());

    let img = random_image(9);
    assert_eq!(
        b.encode_image(&img).unwrap().vector,
        reloaded.encode_image(&img).unwrap().vector
    );
}

#[test]
fn parallel_batch_encoding_is_order_stable() {
    let b = micro();
    let batch: Vec<_> = (0..8).map(random_image).collect();
    let seq: Vec<_> = batch
        .iter()
        .map(|px| b.encode_image(px).unwrap().vector)
        .collect();
    let par = b.encode_images(&batch).unwrap();
    for (s, p) in seq.iter().zip(par.iter()) {
        assert_eq!(s, &p.vector);
    }
}
