//! Operational glue shared by the subcommands: bundle/dataset loading,
//! chunked evaluation, per-cell execution with caching, probe cells, and
//! the cross-dataset grid.

pub use crate::config::MethodKind;
use crate::config::ExperimentConfig;
use crate::CliError;
use rsprompt_backbone::BackboneBundle;
use rsprompt_data::{
    enter_evaluation, sample_few_shot, sample_validation, Dataset, FewShotManifest,
};
use rsprompt_eval::{
    aggregate_runs, cross_eval, winner, CrossEvalSubject, EvalReport, Provenance, TransferMatrix,
    WinnerMatrix,
};
use rsprompt_methods::{
    build_zeroshot_classifier, class_text_features, gaussian_prompt_aggregate, gaussian_weights,
    prompted_image_features, Method, PromptState,
};
use rsprompt_probe::{evaluate_probe, extract_features, fit_probe, search_c, FeatureTable};
use rsprompt_train::{load_checkpoint, save_checkpoint, train, CheckpointMeta};
use std::path::{Path, PathBuf};

/// Evaluation batch size: bounds pixel memory on large test splits.
const EVAL_CHUNK: usize = 128;

pub fn load_bundle(cfg: &ExperimentConfig) -> Result<BackboneBundle<f32>, CliError> {
    if let Some(seed) = cfg.paths.backbone_archive.strip_prefix("micro:") {
        let seed: u64 = seed
            .parse()
            .map_err(|_| CliError::Config(format!("bad micro seed {seed:?}")))?;
        return Ok(BackboneBundle::micro(seed));
    }
    let metadata = cfg.paths.backbone_metadata.as_ref().ok_or_else(|| {
        CliError::Config("paths.backbone_metadata is required for a weight archive".into())
    })?;
    Ok(BackboneBundle::load(
        Path::new(&cfg.paths.backbone_archive),
        metadata,
    )?)
}

pub fn load_dataset(cfg: &ExperimentConfig, name: &str) -> Result<Dataset, CliError> {
    Ok(Dataset::load_auto(
        name,
        &cfg.paths.data_root,
        &cfg.paths.manifest_root,
    )?)
}

pub fn load_templates(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    match &cfg.paths.templates {
        Some(path) => Ok(rsprompt_methods::load_templates(path)?),
        None => Ok(rsprompt_methods::default_templates()),
    }
}

fn load_pixels(
    bundle: &BackboneBundle<f32>,
    dataset: &Dataset,
    ids: &[&str],
) -> Result<Vec<rsprompt_tensor::Arr<f32>>, CliError> {
    ids.iter()
        .map(|id| {
            let img = image::open(dataset.image_path(id)).map_err(|e| CliError::Task {
                what: format!("image {id}"),
                problem: e.to_string(),
            })?;
            Ok(bundle.preprocess.apply(&img)?.into_dyn())
        })
        .collect()
}

/// Provenance stub shared by every report of a run.
pub fn base_provenance(cfg: &ExperimentConfig, bundle: &BackboneBundle<f32>, ds: &Dataset) -> Provenance {
    let mut split_digests = std::collections::BTreeMap::new();
    split_digests.insert(format!("{}::train", ds.descriptor.name), ds.train.digest());
    split_digests.insert(format!("{}::test", ds.descriptor.name), ds.test.digest());
    Provenance {
        config_hash: cfg.hash(),
        backbone_digest: bundle.digest(),
        split_digests,
        manifest_digests: vec![],
        checkpoint_ids: vec![],
    }
}

/// Zero-shot evaluation of one dataset with a template.
pub fn zeroshot_report(
    cfg: &ExperimentConfig,
    bundle: &BackboneBundle<f32>,
    dataset: &Dataset,
    template: &str,
) -> Result<EvalReport, CliError> {
    let bank = build_zeroshot_classifier(bundle, &dataset.class_vocab, template)?;
    let _guard = enter_evaluation();
    let items = dataset.test.items().to_vec();
    let mut preds = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    for chunk in items.chunks(EVAL_CHUNK) {
        let ids: Vec<&str> = chunk.iter().map(|(id, _)| id.as_str()).collect();
        let pixels = load_pixels(bundle, dataset, &ids)?;
        let feats = bundle.encode_images(&pixels)?;
        let logits = rsprompt_backbone::similarity_logits(&feats, &bank.embeddings, bundle.tau())?;
        preds.extend(rsprompt_eval::metrics::predictions_from_logits(&logits.view()));
        for (_, raw) in chunk {
            labels.push(dataset.class_id(raw)?);
        }
    }
    Ok(EvalReport::single(
        &dataset.descriptor.name,
        "zeroshot",
        None,
        0,
        &preds,
        &labels,
        &dataset.class_vocab,
        base_provenance(cfg, bundle, dataset),
    )?)
}

/// Chunked test-split evaluation of a trained prompt state.
pub fn evaluate_prompt_state(
    bundle: &BackboneBundle<f32>,
    dataset: &Dataset,
    state: &PromptState<f32>,
) -> Result<(Vec<usize>, Vec<usize>), CliError> {
    let _guard = enter_evaluation();
    let items = dataset.test.items().to_vec();
    let mut preds = Vec::with_capacity(items.len());
    let mut labels = Vec::with_capacity(items.len());
    // image-independent classifier banks are computed once
    let bank = if state.method == Method::Cocoop {
        None
    } else {
        Some(class_text_features(bundle, state, &dataset.class_vocab)?)
    };
    for chunk in items.chunks(EVAL_CHUNK) {
        let ids: Vec<&str> = chunk.iter().map(|(id, _)| id.as_str()).collect();
        let pixels = load_pixels(bundle, dataset, &ids)?;
        let logits = match &bank {
            Some(bank) => {
                let img = prompted_image_features(bundle, state, &pixels)?;
                img.dot(&bank.t()).mapv(|v| v * bundle.tau())
            }
            None => rsprompt_methods::eval_logits(bundle, state, &pixels, &dataset.class_vocab)?,
        };
        preds.extend(rsprompt_eval::metrics::predictions_from_logits(&logits.view()));
        for (_, raw) in chunk {
            labels.push(dataset.class_id(raw)?);
        }
    }
    Ok((preds, labels))
}

/// Few-shot manifests are shared by every method: sample once, persist, and
/// re-serve the identical file afterwards.
pub fn shared_manifest(
    out_root: &Path,
    dataset: &Dataset,
    k: usize,
    seed: u64,
) -> Result<FewShotManifest, CliError> {
    let dir = out_root.join("fewshot");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(FewShotManifest::file_name(&dataset.descriptor.name, k, seed));
    if path.is_file() {
        let existing = FewShotManifest::read(&path)?;
        let regenerated = sample_few_shot(dataset, k, seed)?;
        if existing != regenerated {
            return Err(CliError::Task {
                what: format!("few-shot manifest {}", path.display()),
                problem: "stored manifest does not match regeneration; split changed?".into(),
            });
        }
        return Ok(existing);
    }
    let manifest = sample_few_shot(dataset, k, seed)?;
    manifest.write(&path)?;
    Ok(manifest)
}

/// Directory of one (dataset, method, shots, seed) cell.
pub fn cell_dir(out_root: &Path, dataset: &str, method: &str, shots: usize, seed: u64) -> PathBuf {
    out_root
        .join(dataset)
        .join(method)
        .join(shots.to_string())
        .join(format!("seed{seed}"))
}

/// Train + evaluate one prompt-method cell, consuming cached results when
/// present. Returns the per-seed report.
#[allow(clippy::too_many_arguments)]
pub fn run_prompt_cell(
    cfg: &ExperimentConfig,
    bundle: &BackboneBundle<f32>,
    dataset: &Dataset,
    method: Method,
    shots: usize,
    seed: u64,
    templates: &[String],
    force: bool,
) -> Result<EvalReport, CliError> {
    let dir = cell_dir(&cfg.paths.output_root, &dataset.descriptor.name, method.name(), shots, seed);
    let report_path = dir.join("report.json");
    if report_path.is_file() && !force {
        log::info!("cache hit: {}", report_path.display());
        return Ok(serde_json::from_str(&std::fs::read_to_string(&report_path)?)?);
    }
    std::fs::create_dir_all(&dir)?;

    let manifest = shared_manifest(&cfg.paths.output_root, dataset, shots, seed)?;
    let mcfg = {
        let mut m = cfg.method_config(method);
        // clamp the prompt depth to the loaded towers
        m.prompt_depth = m
            .prompt_depth
            .min(bundle.geometry.text_layers)
            .min(bundle.geometry.vision_layers);
        m
    };
    let tcfg = cfg.train_config(method, seed);

    let started = std::time::Instant::now();
    let outcome = train(bundle, dataset, &manifest, method, &mcfg, &tcfg, templates)?;
    let wall = started.elapsed().as_secs_f64();

    // choose the evaluated state: snapshot ensemble when enabled
    let evaluated = if mcfg.ensemble.enabled
        && cfg.method.evaluate_ensembled
        && !outcome.snapshots.is_empty()
    {
        let epochs = outcome.snapshots.len();
        let mean = mcfg
            .ensemble
            .mean_epoch
            .unwrap_or((epochs as f64 + 1.0) / 2.0);
        let sigma = mcfg.ensemble.sigma.unwrap_or(epochs as f64 / 3.3);
        let weights = gaussian_weights(epochs, mean, sigma);
        log::info!("evaluating the snapshot-ensembled state (mean {mean:.1}, sigma {sigma:.2})");
        gaussian_prompt_aggregate(&outcome.snapshots, &weights)?
    } else {
        outcome.state.clone()
    };

    let meta = CheckpointMeta {
        method,
        init_template: mcfg.init_template.clone(),
        seed,
        vocab_digest: evaluated.vocab_digest.clone(),
        config_hash: cfg.hash(),
        manifest_digest: manifest.digest(),
        backbone_digest: bundle.digest(),
        epoch: tcfg.epochs,
        train_loss: outcome.history.last().map_or(f64::NAN, |h| h.mean_loss),
        wall_clock_secs: wall,
    };
    save_checkpoint(&evaluated, &meta, &dir.join("checkpoint.rsw"))?;
    if evaluated != outcome.state {
        save_checkpoint(&outcome.state, &meta, &dir.join("checkpoint_final.rsw"))?;
    }
    std::fs::write(
        dir.join("train_log.jsonl"),
        outcome
            .steps
            .iter()
            .map(|s| serde_json::to_string(s).unwrap() + "\n")
            .collect::<String>(),
    )?;
    std::fs::write(
        dir.join("epochs.jsonl"),
        outcome
            .history
            .iter()
            .map(|h| serde_json::to_string(h).unwrap() + "\n")
            .collect::<String>(),
    )?;

    let (preds, labels) = evaluate_prompt_state(bundle, dataset, &evaluated)?;
    let mut provenance = base_provenance(cfg, bundle, dataset);
    provenance.manifest_digests = vec![manifest.digest()];
    provenance.checkpoint_ids = vec![dir.join("checkpoint.rsw").display().to_string()];
    let report = EvalReport::single(
        &dataset.descriptor.name,
        method.name(),
        Some(shots),
        seed,
        &preds,
        &labels,
        &dataset.class_vocab,
        provenance,
    )?;
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Linear-probe cell: extract features, two-stage C search on a held-out
/// class-balanced validation draw, fit, evaluate.
pub fn run_probe_cell(
    cfg: &ExperimentConfig,
    bundle: &BackboneBundle<f32>,
    dataset: &Dataset,
    shots: usize,
    seed: u64,
    force: bool,
) -> Result<EvalReport, CliError> {
    let dir = cell_dir(&cfg.paths.output_root, &dataset.descriptor.name, "linear_probe", shots, seed);
    let report_path = dir.join("report.json");
    if report_path.is_file() && !force {
        log::info!("cache hit: {}", report_path.display());
        return Ok(serde_json::from_str(&std::fs::read_to_string(&report_path)?)?);
    }
    std::fs::create_dir_all(&dir)?;

    let manifest = shared_manifest(&cfg.paths.output_root, dataset, shots, seed)?;
    let val_per_class = shots.min(cfg.probe.val_per_class_cap);
    let val_manifest = sample_validation(dataset, &manifest, val_per_class, seed)?;

    let normalize = cfg.probe.normalize_features;
    let train_table = extract_features(
        bundle,
        &dataset.root,
        &manifest.items,
        &format!("train_k{shots}_seed{seed}"),
        normalize,
    )?;
    let val_table = extract_features(
        bundle,
        &dataset.root,
        &val_manifest.items,
        &format!("val_k{shots}_seed{seed}"),
        normalize,
    )?;

    // test features are cacheable across every probe cell of the dataset
    let cache_dir = cfg.paths.output_root.join("features");
    std::fs::create_dir_all(&cache_dir)?;
    let split_tag = if normalize { "test_norm" } else { "test_raw" };
    let cache_path = cache_dir.join(FeatureTable::cache_name(
        &dataset.descriptor.name,
        split_tag,
        &bundle.digest(),
    ));
    let test_table = if cache_path.is_file() {
        FeatureTable::load(&cache_path)?
    } else {
        let guard = enter_evaluation();
        let items: Vec<(String, usize)> = dataset
            .test
            .items()
            .iter()
            .map(|(id, raw)| Ok((id.clone(), dataset.class_id(raw)?)))
            .collect::<Result<_, CliError>>()?;
        drop(guard);
        let table = extract_features(bundle, &dataset.root, &items, split_tag, normalize)?;
        table.save(&cache_path)?;
        table
    };

    let (c_reg, trace) = search_c(&train_table, &val_table, &cfg.probe_search_config())?;
    let model = fit_probe(&train_table, c_reg)?;
    std::fs::write(dir.join("search_trace.json"), serde_json::to_string_pretty(&trace)?)?;
    let (_, preds) = evaluate_probe(&model, &test_table)?;

    let mut provenance = base_provenance(cfg, bundle, dataset);
    provenance.manifest_digests = vec![manifest.digest(), val_manifest.digest()];
    let report = EvalReport::single(
        &dataset.descriptor.name,
        "linear_probe",
        Some(shots),
        seed,
        &preds,
        &test_table.labels,
        &dataset.class_vocab,
        provenance,
    )?;
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

/// Cross-dataset grid: source-trained 16-shot checkpoints of each method,
/// evaluated on every target's full test split, seed-averaged.
pub fn crosseval_grid(
    cfg: &ExperimentConfig,
    bundle: &BackboneBundle<f32>,
    datasets: &[Dataset],
    methods: &[Method],
    shots: usize,
) -> Result<(Vec<TransferMatrix>, WinnerMatrix), CliError> {
    let names: Vec<String> = datasets.iter().map(|d| d.descriptor.name.clone()).collect();
    let mut matrices = Vec::new();
    for &method in methods {
        let mut grid = TransferMatrix::empty(method.name(), &names, &names);
        for source in datasets {
            // seed checkpoints from the in-domain runs
            let mut states = Vec::new();
            for &seed in &cfg.experiment.seeds {
                let path = cell_dir(
                    &cfg.paths.output_root,
                    &source.descriptor.name,
                    method.name(),
                    shots,
                    seed,
                )
                .join("checkpoint.rsw");
                if !path.is_file() {
                    log::warn!(
                        "missing checkpoint {}; cells from this source stay unmarked",
                        path.display()
                    );
                    continue;
                }
                let (state, _) = load_checkpoint(&path, &bundle.digest(), None)?;
                states.push(state);
            }
            if states.is_empty() {
                continue;
            }
            for target in datasets {
                let mut accs = Vec::new();
                for state in &states {
                    let (acc, _) = cross_eval(bundle, CrossEvalSubject::Prompt(state), target)?;
                    accs.push(acc);
                }
                let mean = accs.iter().sum::<f64>() / accs.len() as f64;
                grid.set(&source.descriptor.name, &target.descriptor.name, mean)?;
            }
        }
        matrices.push(grid);
    }
    let w = winner(&matrices)?;
    Ok((matrices, w))
}

/// Aggregate cached per-seed reports of one cell.
pub fn aggregate_cell(
    out_root: &Path,
    dataset: &str,
    method: &str,
    shots: usize,
    seeds: &[u64],
) -> Result<Option<EvalReport>, CliError> {
    let mut reports = Vec::new();
    for &seed in seeds {
        let path = cell_dir(out_root, dataset, method, shots, seed).join("report.json");
        if path.is_file() {
            reports.push(serde_json::from_str(&std::fs::read_to_string(&path)?)?);
        }
    }
    if reports.is_empty() {
        return Ok(None);
    }
    Ok(Some(aggregate_runs(&reports)?))
}
