//! Report emission: machine-readable tables (JSON, JSONL, CSV in the
//! flat accuracy-table layout), confusion heatmaps, shots-vs-accuracy
//! curves, and transfer/winner grids. Identical inputs emit identical bytes.

use crate::figures::{curves_svg, heatmap_svg, winner_svg};
use crate::metrics::EvalReport;
use crate::transfer::{TransferMatrix, WinnerMatrix};
use crate::EvalError;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Everything one emission run writes.
#[derive(Default)]
pub struct ReportInputs {
    pub reports: Vec<EvalReport>,
    pub transfer: Vec<TransferMatrix>,
    pub winner: Option<WinnerMatrix>,
}

/// Write only transfer/winner artifacts (the cross-dataset command's
/// output when no in-domain reports accompany it).
pub fn emit_transfer(
    transfer: &[TransferMatrix],
    winner: Option<&WinnerMatrix>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, EvalError> {
    if transfer.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for t in transfer {
        let svg = heatmap_svg(
            &t.cells,
            &t.sources,
            &t.targets,
            &format!("{}: cross-dataset transfer (source × target)", t.method),
        );
        let path = out_dir.join(format!("transfer_{}.svg", t.method));
        std::fs::write(&path, svg)?;
        written.push(path);
        let json_path = out_dir.join(format!("transfer_{}.json", t.method));
        std::fs::write(&json_path, serde_json::to_string_pretty(t)?)?;
        written.push(json_path);
    }
    if let Some(w) = winner {
        let path = out_dir.join("winner.svg");
        std::fs::write(&path, winner_svg(w, "best method per source-target pair"))?;
        written.push(path);
        let json_path = out_dir.join("winner.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(w)?)?;
        written.push(json_path);
    }
    Ok(written)
}

/// Write the full results tree under `out_dir`. Fails before creating any
/// file when there is nothing to report. Returns every path written.
pub fn emit_report(inputs: &ReportInputs, out_dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if inputs.reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    // stable ordering throughout
    let mut reports: Vec<&EvalReport> = inputs.reports.iter().collect();
    reports.sort_by(|a, b| {
        (&a.dataset, &a.method, a.shots).cmp(&(&b.dataset, &b.method, b.shots))
    });

    // one structured line per report
    let jsonl_path = out_dir.join("reports.jsonl");
    let mut jsonl = String::new();
    for r in &reports {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
    }
    std::fs::write(&jsonl_path, jsonl)?;
    written.push(jsonl_path);

    // flat accuracy table: one row per (method, shots), one column per dataset
    let mut datasets: Vec<String> = reports.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut rows: BTreeMap<(String, Option<usize>), BTreeMap<String, f64>> = BTreeMap::new();
    for r in &reports {
        rows.entry((r.method.clone(), r.shots))
            .or_default()
            .insert(r.dataset.clone(), r.mean_accuracy);
    }
    let mut csv = String::from("method,shots");
    for d in &datasets {
        csv.push(',');
        csv.push_str(d);
    }
    csv.push('\n');
    for ((method, shots), cells) in &rows {
        csv.push_str(method);
        csv.push(',');
        csv.push_str(&shots.map_or_else(|| "-".to_string(), |s| s.to_string()));
        for d in &datasets {
            csv.push(',');
            match cells.get(d) {
                Some(acc) => csv.push_str(&format!("{:.2}", acc * 100.0)),
                None => csv.push('-'),
            }
        }
        csv.push('\n');
    }
    let csv_path = out_dir.join("table.csv");
    std::fs::write(&csv_path, csv)?;
    written.push(csv_path);

    // per-report artifacts
    for r in &reports {
        let dir = match r.shots {
            Some(s) => out_dir.join(&r.dataset).join(&r.method).join(s.to_string()),
            None => out_dir.join(&r.dataset).join(&r.method),
        };
        std::fs::create_dir_all(&dir)?;
        let report_path = dir.join("report.json");
        std::fs::write(&report_path, serde_json::to_string_pretty(r)?)?;
        written.push(report_path);

        let values: Vec<Vec<Option<f64>>> = r
            .confusion
            .normalized
            .iter()
            .map(|row| row.iter().map(|&v| Some(v)).collect())
            .collect();
        let svg = heatmap_svg(
            &values,
            &r.confusion.class_names,
            &r.confusion.class_names,
            &format!(
                "{} / {}{}: normalized confusion",
                r.dataset,
                r.method,
                r.shots.map_or_else(String::new, |s| format!(" ({s}-shot)"))
            ),
        );
        let cm_path = dir.join("confusion.svg");
        std::fs::write(&cm_path, svg)?;
        written.push(cm_path);
    }

    // shots-vs-accuracy curves per dataset
    for dataset in &datasets {
        let mut shots: Vec<usize> = reports
            .iter()
            .filter(|r| &r.dataset == dataset)
            .filter_map(|r| r.shots)
            .collect();
        shots.sort();
        shots.dedup();
        if shots.is_empty() {
            continue;
        }
        let mut methods: Vec<String> = reports
            .iter()
            .filter(|r| &r.dataset == dataset && r.shots.is_some())
            .map(|r| r.method.clone())
            .collect();
        methods.sort();
        methods.dedup();
        let series: Vec<(String, Vec<Option<f64>>)> = methods
            .iter()
            .map(|m| {
                let accs = shots
                    .iter()
                    .map(|s| {
                        reports
                            .iter()
                            .find(|r| &r.dataset == dataset && &r.method == m && r.shots == Some(*s))
                            .map(|r| r.mean_accuracy)
                    })
                    .collect();
                (m.clone(), accs)
            })
            .collect();
        let baselines: Vec<(String, f64)> = reports
            .iter()
            .filter(|r| &r.dataset == dataset && r.shots.is_none())
            .map(|r| (r.method.clone(), r.mean_accuracy))
            .collect();
        let svg = curves_svg(
            &shots,
            &series,
            &baselines,
            &format!("{dataset}: accuracy vs shots"),
        );
        let path = out_dir.join(dataset).join("curves.svg");
        std::fs::create_dir_all(path.parent().unwrap())?;
        std::fs::write(&path, svg)?;
        written.push(path);
    }

    // transfer grids and the winner matrix
    for t in &inputs.transfer {
        let svg = heatmap_svg(
            &t.cells,
            &t.sources,
            &t.targets,
            &format!("{}: cross-dataset transfer (source × target)", t.method),
        );
        let path = out_dir.join(format!("transfer_{}.svg", t.method));
        std::fs::write(&path, svg)?;
        written.push(path);
        let json_path = out_dir.join(format!("transfer_{}.json", t.method));
        std::fs::write(&json_path, serde_json::to_string_pretty(t)?)?;
        written.push(json_path);
    }
    if let Some(w) = &inputs.winner {
        let path = out_dir.join("winner.svg");
        std::fs::write(&path, winner_svg(w, "best method per source-target pair"))?;
        written.push(path);
        let json_path = out_dir.join("winner.json");
        std::fs::write(&json_path, serde_json::to_string_pretty(w)?)?;
        written.push(json_path);
    }

    // top-level summary with provenance
    let summary = serde_json::json!({
        "reports": reports.len(),
        "datasets": datasets,
        "provenance": reports
            .iter()
            .map(|r| serde_json::json!({
                "dataset": r.dataset,
                "method": r.method,
                "shots": r.shots,
                "seeds": r.seeds,
                "mean_accuracy": r.mean_accuracy,
                "config_hash": r.provenance.config_hash,
                "backbone_digest": r.provenance.backbone_digest,
                "split_digests": r.provenance.split_digests,
            }))
            .collect::<Vec<_>>(),
    });
    let summary_path = out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    written.push(summary_path);
    Ok(written)
}
