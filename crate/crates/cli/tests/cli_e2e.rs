//! End-to-end binary runs on the micro backbone with synthetic datasets:
//! full plan execution, idempotent re-runs, digests, cross-eval, exit codes.

use rsprompt_data::synth::build_synthetic;
use std::path::Path;
use std::process::Command;

fn rsprompt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rsprompt"))
}

fn write_config(dir: &Path, datasets: &[&str], methods: &[&str], shots: &[usize], epochs: usize) {
    let cfg = format!
        (
        r#"
[experiment]
datasets = [{datasets}]
methods = [{methods}]
shots = [{shots}]
seeds = [1, 2]

[paths]
data_root = "{root}/images"
manifest_root = "{root}/manifests"
backbone_archive = "micro:17"
output_root = "{root}/results"

[train]
epochs = {epochs}
batch_size = 4
learning_rate = 0.02
"#,
        datasets = datasets
            .iter()
            .map(|d| format!("{d:?}"))
            .collect::<Vec<_>>()
            .join(", "),
        methods = methods
            .iter()
            .map(|m| format!("{m:?}"))
            .collect::<Vec<_>>()
            .join(", "),
        shots = shots
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(", "),
        root = dir.display(),
    );
    std::fs::write(dir.join("config.toml"), cfg).unwrap();
}

#[test]
fn full_plan_runs_and_reruns_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    build_synthetic(dir.path(), "toy", &["an", "photo"], 8, 4, 16, 1).unwrap();
    write_config(dir.path(), &["toy"], &["zeroshot", "coop", "linear_probe"], &[1, 2], 3);

    let out = rsprompt()
        .args(["run", "--config"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );

    let results = dir.path().join("results");
    assert!(results.join("plan.json").is_file());
    assert!(results.join("fewshot/toy_k1_seed1.tsv").is_file());
    assert!(results.join("toy/coop/1/seed1/checkpoint.rsw").is_file());
    assert!(results.join("toy/coop/1/seed1/report.json").is_file());
    assert!(results.join("toy/linear_probe/2/seed2/report.json").is_file());
    assert!(results.join("toy/zeroshot/report.json").is_file());
    assert!(results.join("reports.jsonl").is_file());
    assert!(results.join("table.csv").is_file());
    assert!(results.join("toy/curves.svg").is_file());
    assert!(results.join("summary.json").is_file());

    // plan is fully done
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(results.join("plan.json")).unwrap()).unwrap();
    assert!(plan["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .all(|t| t["status"] == "done"));

    // re-run with --resume: no retraining (checkpoint bytes untouched),
    // reports regenerated identically
    let ckpt = results.join("toy/coop/2/seed1/checkpoint.rsw");
    let ckpt_before = std::fs::read(&ckpt).unwrap();
    let table_before = std::fs::read(results.join("table.csv")).unwrap();
    let out = rsprompt()
        .args(["run", "--resume", "--config"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(&ckpt).unwrap(), ckpt_before);
    assert_eq!(std::fs::read(results.join("table.csv")).unwrap(), table_before);
}

#[test]
fn digest_is_stable_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    build_synthetic(dir.path(), "toy", &["an", "photo"], 4, 2, 16, 1).unwrap();
    write_config(dir.path(), &["toy"], &["coop"], &[1], 1);
    let run = || {
        let out = rsprompt()
            .args(["digest", "--config"])
            .arg(dir.path().join("config.toml"))
            .output()
            .unwrap();
        assert!(out.status.success());
        String::from_utf8(out.stdout).unwrap()
    };
    let a = run();
    assert_eq!(a, run());
    assert!(a.contains("backbone\t"));
    assert!(a.contains("toy::test\t"));
}

#[test]
fn crosseval_grid_emits_complete_transfer_and_winner() {
    let dir = tempfile::tempdir().unwrap();
    build_synthetic(dir.path(), "alpha", &["an", "photo"], 20, 3, 16, 1).unwrap();
    build_synthetic(dir.path(), "beta", &["an", "of"], 20, 3, 16, 2).unwrap();
    write_config(dir.path(), &["alpha", "beta"], &["coop", "maple"], &[16], 2);

    let out = rsprompt()
        .args(["run", "--config"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = rsprompt()
        .args(["crosseval", "--shots", "16", "--config"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "crosseval failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let results = dir.path().join("results");
    for method in ["coop", "maple"] {
        let t: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(results.join(format!("transfer_{method}.json"))).unwrap(),
        )
        .unwrap();
        let cells = t["cells"].as_array().unwrap();
        assert_eq!(cells.len(), 2);
        for row in cells {
            for cell in row.as_array().unwrap() {
                assert!(cell.is_number(), "incomplete transfer grid: {t}");
            }
        }
    }
    assert!(results.join("winner.json").is_file());
    assert!(results.join("winner.svg").is_file());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    build_synthetic(dir.path(), "toy", &["an", "photo"], 4, 2, 16, 1).unwrap();
    // shots = 3 violates the protocol set
    write_config(dir.path(), &["toy"], &["coop"], &[3], 1);
    let out = rsprompt()
        .args(["run", "--config"])
        .arg(dir.path().join("config.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // missing config flag is also a config error
    let out = rsprompt().args(["run"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_instructions_print_for_registered_datasets() {
    let out = rsprompt()
        .args(["data", "--dataset", "eurosat"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("27000 images"));
    assert!(text.contains("10 classes"));
}
