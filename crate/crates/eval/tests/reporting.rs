//! Report emission: refusal on empty input, file layout, determinism, and
//! the toy cross-dataset identity.

use rsprompt_backbone::BackboneBundle;
use rsprompt_data::synth::build_synthetic;
use rsprompt_data::{sample_few_shot, Split};
use rsprompt_eval::{
    cross_eval, emit_report, CrossEvalSubject, EvalError, EvalReport, Provenance, ReportInputs,
    TransferMatrix,
};
use rsprompt_methods::{Method, MethodConfig, PromptState};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class {i}")).collect()
}

fn sample_report(dataset: &str, method: &str, shots: Option<usize>) -> EvalReport {
    EvalReport::single(
        dataset,
        method,
        shots,
        1,
        &[0, 1, 1, 0],
        &[0, 1, 0, 0],
        &names(2),
        Provenance::default(),
    )
    .unwrap()
}

#[test]
fn empty_report_list_is_refused_without_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let err = emit_report(&ReportInputs::default(), &out);
    assert!(matches!(err, Err(EvalError::EmptyInput)));
    assert!(!out.exists(), "no partial files on failure");
}

#[test]
fn emission_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let mut inputs = ReportInputs {
        reports: vec![
            sample_report("toy", "coop", Some(1)),
            sample_report("toy", "coop", Some(4)),
            sample_report("toy", "zeroshot", None),
        ],
        ..Default::default()
    };
    let mut t = TransferMatrix::empty("coop", &["toy".into()], &["toy".into()]);
    t.set("toy", "toy", 0.75).unwrap();
    inputs.transfer.push(t.clone());
    inputs.winner = Some(rsprompt_eval::winner(&[t]).unwrap());

    let written = emit_report(&inputs, &out).unwrap();
    assert!(out.join("reports.jsonl").is_file());
    assert!(out.join("table.csv").is_file());
    assert!(out.join("toy/coop/1/report.json").is_file());
    assert!(out.join("toy/coop/1/confusion.svg").is_file());
    assert!(out.join("toy/curves.svg").is_file());
    assert!(out.join("transfer_coop.svg").is_file());
    assert!(out.join("winner.svg").is_file());
    assert!(out.join("summary.json").is_file());

    // byte-identical re-run
    let before: Vec<(std::path::PathBuf, Vec<u8>)> = written
        .iter()
        .map(|p| (p.clone(), std::fs::read(p).unwrap()))
        .collect();
    emit_report(&inputs, &out).unwrap();
    for (path, bytes) in before {
        assert_eq!(std::fs::read(&path).unwrap(), bytes, "{path:?} changed");
    }

    // csv carries the accuracy table layout
    let csv = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(csv.starts_with("method,shots,toy\n"));
    assert!(csv.contains("coop,1,"));
    assert!(csv.contains("zeroshot,-,"));
}

#[test]
fn cross_eval_source_equals_target_matches_direct_evaluation() {
    // toy two-dataset fixture sharing classes: transfer onto the same
    // dataset must equal the direct evaluation of the same state
    let dir = tempfile::tempdir().unwrap();
    let bundle = BackboneBundle::<f32>::micro(31);
    let ds = build_synthetic(dir.path(), "toy", &["an", "photo"], 6, 4, 16, 3).unwrap();
    let cfg = MethodConfig::defaults_for(Method::Coop);
    let state = PromptState::init(Method::Coop, &bundle, &cfg, &ds.class_vocab, 1).unwrap();

    let (acc, cm) = cross_eval(&bundle, CrossEvalSubject::Prompt(&state), &ds).unwrap();

    // direct path: same pixels, same vocabulary, same state
    let guard = rsprompt_data::enter_evaluation();
    let pixels: Vec<rsprompt_tensor::Arr<f32>> = ds
        .test
        .items()
        .iter()
        .map(|(id, _)| {
            let img = image::open(ds.image_path(id)).unwrap();
            bundle.preprocess.apply(&img).unwrap().into_dyn()
        })
        .collect();
    let labels: Vec<usize> = ds
        .test
        .items()
        .iter()
        .map(|(_, raw)| ds.class_id(raw).unwrap())
        .collect();
    drop(guard);
    let logits = rsprompt_methods::eval_logits(&bundle, &state, &pixels, &ds.class_vocab).unwrap();
    let direct = rsprompt_eval::top1(&logits.view(), &labels).unwrap();
    assert!((acc - direct).abs() < 1e-12);
    assert_eq!(cm.num_classes(), 2);
}

#[test]
fn cross_eval_rejects_probe_subject() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = BackboneBundle::<f32>::micro(31);
    let ds = build_synthetic(dir.path(), "toy", &["an", "photo"], 4, 2, 16, 3).unwrap();
    let err = cross_eval(&bundle, CrossEvalSubject::LinearProbe, &ds);
    assert!(matches!(err, Err(EvalError::UnsupportedMethod(_))));
}

#[test]
fn cross_eval_never_reads_target_training_data() {
    // the evaluation-phase guard forbids train-manifest access inside
    // cross_eval; reading it on this thread immediately after must succeed
    let dir = tempfile::tempdir().unwrap();
    let bundle = BackboneBundle::<f32>::micro(31);
    let ds = build_synthetic(dir.path(), "toy", &["an", "photo"], 4, 2, 16, 3).unwrap();
    let cfg = MethodConfig::defaults_for(Method::Coop);
    let state = PromptState::init(Method::Coop, &bundle, &cfg, &ds.class_vocab, 1).unwrap();
    cross_eval(&bundle, CrossEvalSubject::Prompt(&state), &ds).unwrap();
    assert_eq!(ds.train.items().len(), 8);

    // and the sampler respects the guard in the other direction
    let manifest = sample_few_shot(&ds, 2, 1).unwrap();
    assert_eq!(manifest.items.len(), 4);
    assert_eq!(ds.train.split, Split::Train);
}
