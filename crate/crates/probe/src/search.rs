//! Two-stage regularization search: a coarse log-spaced grid, then up to 8
//! bisection refinement steps in log space around the best bracket. Ties
//! always prefer the smaller strength.

use crate::features::FeatureTable;
use crate::logreg::{fit_probe, predict};
use crate::ProbeError;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Coarse grid bounds (inclusive) and point count.
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    /// Refinement step cap.
    pub refine_steps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            grid_lo: 1e-4,
            grid_hi: 1e4,
            grid_points: 10,
            refine_steps: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchTrace {
    /// Every evaluated candidate: (C, validation accuracy, stage).
    pub evaluations: Vec<(f64, f64, String)>,
    pub refine_steps_used: usize,
    pub chosen: f64,
}

/// Search over an arbitrary evaluator (validation accuracy as a function of
/// C). Exposed separately so the refinement behavior can be verified against
/// synthetic curves.
pub fn search_c_with<F: FnMut(f64) -> f64>(cfg: &SearchConfig, mut eval: F) -> SearchTrace {
    let mut trace = SearchTrace {
        evaluations: Vec::new(),
        refine_steps_used: 0,
        chosen: cfg.grid_lo,
    };
    let lo_exp = cfg.grid_lo.log10();
    let hi_exp = cfg.grid_hi.log10();
    let n = cfg.grid_points.max(2);
    let grid: Vec<f64> = (0..n)
        .map(|k| 10f64.powf(lo_exp + (hi_exp - lo_exp) * k as f64 / (n - 1) as f64))
        .collect();
    for &c in &grid {
        let acc = eval(c);
        trace.evaluations.push((c, acc, "coarse".into()));
    }
    // best coarse point, ties to the smallest C (ascending grid order)
    let best_idx = trace
        .evaluations
        .iter()
        .enumerate()
        .max_by(|(ia, (_, a, _)), (ib, (_, b, _))| {
            a.partial_cmp(b)
                .unwrap()
                .then(ib.cmp(ia)) // earlier index wins ties
        })
        .map(|(i, _)| i)
        .unwrap();

    // refinement bracket around the best coarse point, in log space
    let mut lo = grid[best_idx.saturating_sub(1)].log10();
    let mut hi = grid[(best_idx + 1).min(grid.len() - 1)].log10();
    let delta = (hi - lo).abs() * 1e-6;
    for _ in 0..cfg.refine_steps {
        if hi - lo <= delta * 4.0 {
            break;
        }
        trace.refine_steps_used += 1;
        let mid = 0.5 * (lo + hi);
        let below = eval(10f64.powf(mid - delta));
        let above = eval(10f64.powf(mid + delta));
        trace
            .evaluations
            .push((10f64.powf(mid - delta), below, "refine".into()));
        trace
            .evaluations
            .push((10f64.powf(mid + delta), above, "refine".into()));
        if below > above {
            hi = mid + delta;
        } else if above > below {
            lo = mid - delta;
        } else {
            // flat at the midpoint: prefer the smaller-C half
            hi = mid + delta;
        }
    }
    // winner over everything evaluated; ties prefer the smallest C
    let mut best: Option<(f64, f64)> = None;
    for (c, acc, _) in &trace.evaluations {
        best = match best {
            None => Some((*c, *acc)),
            Some((bc, ba)) => {
                if *acc > ba || (*acc == ba && *c < bc) {
                    Some((*c, *acc))
                } else {
                    Some((bc, ba))
                }
            }
        };
    }
    trace.chosen = best.unwrap().0;
    trace
}

/// Full two-stage search over real fits: every candidate C trains on
/// `train` and scores on `validation`.
pub fn search_c(
    train: &FeatureTable,
    validation: &FeatureTable,
    cfg: &SearchConfig,
) -> Result<(f64, SearchTrace), ProbeError> {
    if validation.is_empty() {
        return Err(ProbeError::EmptyTable);
    }
    let mut fit_err = None;
    let trace = search_c_with(cfg, |c| {
        match fit_probe(train, c) {
            Ok(model) => {
                let preds = predict(&model, &validation.features);
                let correct = preds
                    .iter()
                    .zip(validation.labels.iter())
                    .filter(|(p, l)| p == l)
                    .count();
                correct as f64 / validation.labels.len() as f64
            }
            Err(e) => {
                fit_err = Some(e);
                f64::NEG_INFINITY
            }
        }
    });
    if let Some(e) = fit_err {
        return Err(e);
    }
    log::info!(
        "regularization search: chose C={} after {} refinement steps ({} evaluations)",
        trace.chosen,
        trace.refine_steps_used,
        trace.evaluations.len()
    );
    Ok((trace.chosen, trace))
}
