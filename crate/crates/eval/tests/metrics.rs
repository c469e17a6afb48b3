//! Metric oracles: hand tallies, Monte Carlo accuracy bands, the
//! trace-weighted confusion identity, aggregation arithmetic, winner maxima.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rsprompt_eval::metrics::report_from_logits;
use rsprompt_eval::{
    aggregate_runs, confusion, top1, winner, EvalError, EvalReport, Provenance, TransferMatrix,
};

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class {i}")).collect()
}

#[test]
fn top1_basic_fractions() {
    let logits =
        Array2::from_shape_vec((4, 2), vec![2.0, 1.0, 0.0, 1.0, 3.0, -1.0, 0.5, 0.4]).unwrap();
    // predictions: 0, 1, 0, 0
    assert_eq!(top1(&logits.view(), &[0, 1, 0, 0]).unwrap(), 1.0);
    assert_eq!(top1(&logits.view(), &[0, 1, 0, 1]).unwrap(), 0.75);
    assert!(matches!(
        top1(&Array2::<f64>::zeros((0, 2)).view(), &[]),
        Err(EvalError::EmptyInput)
    ));
}

#[test]
fn argmax_ties_break_to_lowest_index() {
    let logits = Array2::from_shape_vec((1, 3), vec![0.5, 0.5, 0.2]).unwrap();
    assert_eq!(top1(&logits.view(), &[0]).unwrap(), 1.0);
    assert_eq!(top1(&logits.view(), &[1]).unwrap(), 0.0);
}

#[test]
fn random_uniform_predictor_matches_chance_within_3_sigma() {
    let classes = 7usize;
    let n = 20_000usize;
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut logits = Array2::<f64>::zeros((n, classes));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        for c in 0..classes {
            logits[(i, c)] = rng.random_range(-1.0..1.0);
        }
        labels.push(rng.random_range(0..classes as u64) as usize);
    }
    let acc = top1(&logits.view(), &labels).unwrap();
    let p = 1.0 / classes as f64;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!(
        (acc - p).abs() < 3.0 * sigma,
        "accuracy {acc} outside {p} ± {}",
        3.0 * sigma
    );
}

#[test]
fn confusion_hand_tally_fixture() {
    // 6 samples over 3 classes, tallied by hand:
    //   true 0: predicted 0, 1        -> row [0.5, 0.5, 0]
    //   true 1: predicted 1, 1        -> row [0, 1, 0]
    //   true 2: predicted 0, 2        -> row [0.5, 0, 0.5]
    let preds = [0, 1, 1, 1, 0, 2];
    let labels = [0, 0, 1, 1, 2, 2];
    let cm = confusion(&preds, &labels, &names(3)).unwrap();
    assert_eq!(cm.counts[0], vec![1, 1, 0]);
    assert_eq!(cm.counts[1], vec![0, 2, 0]);
    assert_eq!(cm.counts[2], vec![1, 0, 1]);
    assert_eq!(cm.normalized[0], vec![0.5, 0.5, 0.0]);
    assert_eq!(cm.normalized[1], vec![0.0, 1.0, 0.0]);
    assert_eq!(cm.normalized[2], vec![0.5, 0.0, 0.5]);
    assert!((cm.accuracy() - 4.0 / 6.0).abs() < 1e-15);
}

#[test]
fn perfect_predictions_give_identity_matrix() {
    let labels = [0, 1, 2, 1, 0];
    let cm = confusion(&labels, &labels, &names(3)).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(cm.normalized[i][j], if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn populated_rows_sum_to_one_and_accuracy_is_weighted_diagonal() {
    // 1,000 random fixtures: top1 == Σ_t freq(t) · diag(t) within 1e-12
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let classes = rng.random_range(2..6usize);
        let n = rng.random_range(3..40usize);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes as u64) as usize).collect();
        let labels: Vec<usize> =
            (0..n).map(|_| rng.random_range(0..classes as u64) as usize).collect();
        let cm = confusion(&preds, &labels, &names(classes)).unwrap();
        let mut weighted = 0.0;
        for t in 0..classes {
            let row_total: u64 = cm.counts[t].iter().sum();
            if row_total > 0 {
                let row_sum: f64 = cm.normalized[t].iter().sum();
                assert!((row_sum - 1.0).abs() < 1e-9, "row sum {row_sum}");
            }
            weighted += (row_total as f64 / n as f64) * cm.normalized[t][t];
        }
        let direct =
            preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / n as f64;
        assert!((weighted - direct).abs() < 1e-12);
    }
}

#[test]
fn aggregation_means_and_pooled_counts() {
    let mk = |seed: u64, preds: &[usize], labels: &[usize]| {
        EvalReport::single(
            "toy",
            "coop",
            Some(4),
            seed,
            preds,
            labels,
            &names(2),
            Provenance::default(),
        )
        .unwrap()
    };
    // seeds (82.0, 83.0, 83.8)-style arithmetic on a small scale:
    // 0.5, 0.75, 1.0 -> mean 0.75
    let a = mk(1, &[0, 1, 1, 0], &[0, 0, 1, 1]);
    let b = mk(2, &[0, 0, 1, 0], &[0, 0, 1, 1]);
    let c = mk(3, &[0, 0, 1, 1], &[0, 0, 1, 1]);
    let agg = aggregate_runs(&[a.clone(), b, c]).unwrap();
    assert!((agg.mean_accuracy - 0.75).abs() < 1e-15);
    assert_eq!(agg.seeds, vec![1, 2, 3]);
    // pooled counts equal the union tally
    let total: u64 = agg.confusion.counts.iter().flatten().sum();
    assert_eq!(total, 12);

    // single seed: mean = that value
    let single = aggregate_runs(std::slice::from_ref(&a)).unwrap();
    assert_eq!(single.mean_accuracy, a.mean_accuracy);

    // mismatched keys rejected
    let mut other = mk(4, &[0], &[0]);
    other.dataset = "other".into();
    assert!(matches!(
        aggregate_runs(&[a, other]),
        Err(EvalError::KeyMismatch(_))
    ));
}

#[test]
fn seed_mean_matches_documented_arithmetic() {
    // (82.0 + 83.0 + 83.8) / 3 = 82.933…
    let accs = [0.82, 0.83, 0.838];
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert!((mean - 0.8293333333333333).abs() < 1e-12);
}

#[test]
fn winner_matrix_matches_elementwise_max_oracle() {
    let sources = vec!["a".to_string(), "b".to_string()];
    let targets = sources.clone();
    let mut grids = Vec::new();
    let values = [
        ("coop", [[0.6, 0.2], [0.5, 0.9]]),
        ("cocoop", [[0.6, 0.3], [0.4, 0.8]]),
        ("maple", [[0.55, 0.4], [0.5, 0.95]]),
        ("promptsrc", [[0.59, 0.4], [0.7, 0.95]]),
    ];
    for (m, cells) in values {
        let mut t = TransferMatrix::empty(m, &sources, &targets);
        for (i, row) in cells.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                t.set(&sources[i], &targets[j], *v).unwrap();
            }
        }
        grids.push(t);
    }
    let w = winner(&grids).unwrap();
    // brute-force max oracle
    for i in 0..2 {
        for j in 0..2 {
            let max = values
                .iter()
                .map(|(_, cells)| cells[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(w.cells[i][j].as_ref().unwrap().accuracy, max);
        }
    }
    // ties: (0,0) coop 0.6 == cocoop 0.6 -> earlier method wins, flagged
    let c00 = w.cells[0][0].as_ref().unwrap();
    assert_eq!(c00.method, "coop");
    assert!(c00.tie);
    // (1,1) maple 0.95 == promptsrc 0.95 -> maple (earlier), flagged
    let c11 = w.cells[1][1].as_ref().unwrap();
    assert_eq!(c11.method, "maple");
    assert!(c11.tie);
}

#[test]
fn winner_propagates_missing_cells() {
    let sources = vec!["a".to_string()];
    let targets = vec!["a".to_string(), "b".to_string()];
    let mut t1 = TransferMatrix::empty("coop", &sources, &targets);
    t1.set("a", "a", 0.5).unwrap();
    let t2 = TransferMatrix::empty("maple", &sources, &targets);
    let w = winner(&[t1, t2]).unwrap();
    assert_eq!(w.cells[0][0].as_ref().unwrap().method, "coop");
    assert!(w.cells[0][1].is_none(), "missing everywhere stays missing");
}

#[test]
fn winner_invariant_under_monotone_transform() {
    let sources = vec!["s".to_string()];
    let targets = vec!["t1".to_string(), "t2".to_string()];
    let raw = [("coop", [0.4, 0.7]), ("maple", [0.6, 0.5])];
    let build = |f: fn(f64) -> f64| {
        raw.iter()
            .map(|(m, cells)| {
                let mut t = TransferMatrix::empty(m, &sources, &targets);
                for (j, v) in cells.iter().enumerate() {
                    t.set("s", &targets[j], f(*v)).unwrap();
                }
                t
            })
            .collect::<Vec<_>>()
    };
    let w1 = winner(&build(|v| v)).unwrap();
    let w2 = winner(&build(|v| v.exp())).unwrap();
    for j in 0..2 {
        assert_eq!(
            w1.cells[0][j].as_ref().unwrap().method,
            w2.cells[0][j].as_ref().unwrap().method
        );
    }
}

#[test]
fn report_from_logits_populates_fields() {
    let logits = Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let report = report_from_logits(
        "toy",
        "zeroshot",
        None,
        1,
        &logits,
        &[0, 1, 1],
        &names(2),
        Provenance::default(),
    )
    .unwrap();
    assert!((report.mean_accuracy - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(report.per_class_accuracy.len(), 2);
}
