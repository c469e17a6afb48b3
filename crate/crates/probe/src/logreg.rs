//! Multinomial logistic regression minimizing
//! `Σ_i CE(softmax(x_i·Wᵀ + b), y_i) + ‖W‖² / (2·C_reg)`
//! with L-BFGS from a zero initialization (bias unregularized).

use crate::features::FeatureTable;
use crate::ProbeError;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

const LBFGS_MEMORY: usize = 10;
const MAX_ITERATIONS: usize = 1000;
const GRAD_TOL: f64 = 1e-6;

/// Fitted probe: weights, bias, regularization, solver trace.
#[derive(Debug, Clone)]
pub struct ProbeModel {
    /// (C, d)
    pub weights: Array2<f64>,
    /// (C,)
    pub bias: Array1<f64>,
    pub c_reg: f64,
    pub trace: SolverTrace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverTrace {
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub final_grad_norm: f64,
}

/// Objective value and gradient at (W, b), flattened as `[W rows..., b]`.
fn objective(
    x: &Array2<f64>,
    labels: &[usize],
    classes: usize,
    c_reg: f64,
    theta: &[f64],
) -> (f64, Vec<f64>) {
    let n = x.nrows();
    let d = x.ncols();
    let w = ndarray::ArrayView2::from_shape((classes, d), &theta[..classes * d]).unwrap();
    let b = &theta[classes * d..];

    let mut loss = 0.0;
    let mut grad_w = Array2::<f64>::zeros((classes, d));
    let mut grad_b = vec![0.0f64; classes];
    let logits_all = x.dot(&w.t());
    for (i, &y) in labels.iter().enumerate() {
        let mut row: Vec<f64> = logits_all.row(i).to_vec();
        for (c, r) in row.iter_mut().enumerate() {
            *r += b[c];
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss -= (row[y] - max) - z.ln();
        for c in 0..classes {
            let p = exps[c] / z;
            let delta = p - if c == y { 1.0 } else { 0.0 };
            grad_b[c] += delta;
            let xi = x.row(i);
            let mut gw = grad_w.row_mut(c);
            for j in 0..d {
                gw[j] += delta * xi[j];
            }
        }
    }
    let _ = n;
    // L2 on weights only
    let mut reg = 0.0;
    for (gw, &wv) in grad_w.iter_mut().zip(w.iter()) {
        reg += wv * wv;
        *gw += wv / c_reg;
    }
    loss += reg / (2.0 * c_reg);
    let mut grad = grad_w.into_raw_vec_and_offset().0;
    grad.extend_from_slice(&grad_b);
    (loss, grad)
}

/// Fit with L-BFGS (memory 10), iteration cap 1000, deterministic from the
/// zero start.
pub fn fit_probe(table: &FeatureTable, c_reg: f64) -> Result<ProbeModel, ProbeError> {
    if table.is_empty() {
        return Err(ProbeError::EmptyTable);
    }
    if c_reg <= 0.0 || !c_reg.is_finite() {
        return Err(ProbeError::BadRegularization(c_reg));
    }
    let classes = table.num_classes();
    let mut seen = vec![false; classes];
    for &l in &table.labels {
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(ProbeError::MissingClass(missing));
    }

    let x = table.features.mapv(|v| v as f64);
    let d = x.ncols();
    let dim = classes * d + classes;
    let mut theta = vec![0.0f64; dim];
    let (mut loss, mut grad) = objective(&x, &table.labels, classes, c_reg, &theta);

    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        let gnorm = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        if gnorm < GRAD_TOL {
            converged = true;
            iterations = iter;
            break;
        }
        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = vec![0.0f64; s_hist.len()];
        for i in (0..s_hist.len()).rev() {
            let alpha = rho_hist[i] * dot(&s_hist[i], &q);
            alphas[i] = alpha;
            axpy(&mut q, -alpha, &y_hist[i]);
        }
        let gamma = if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            dot(s, y) / dot(y, y).max(1e-300)
        } else {
            1.0
        };
        for v in q.iter_mut() {
            *v *= gamma;
        }
        for i in 0..s_hist.len() {
            let beta = rho_hist[i] * dot(&y_hist[i], &q);
            axpy(&mut q, alphas[i] - beta, &s_hist[i]);
        }
        let direction: Vec<f64> = q.iter().map(|v| -v).collect();

        // Armijo backtracking along the L-BFGS direction
        let slope = dot(&grad, &direction);
        if slope >= 0.0 {
            // not a descent direction; drop history and take steepest descent
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
            continue;
        }
        let mut step = 1.0f64;
        let mut next_theta;
        let mut next;
        loop {
            next_theta = theta.clone();
            axpy(&mut next_theta, step, &direction);
            next = objective(&x, &table.labels, classes, c_reg, &next_theta);
            if next.0 <= loss + 1e-4 * step * slope || step < 1e-16 {
                break;
            }
            step *= 0.5;
        }
        let s: Vec<f64> = next_theta
            .iter()
            .zip(theta.iter())
            .map(|(a, b)| a - b)
            .collect();
        let yv: Vec<f64> = next.1.iter().zip(grad.iter()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            if s_hist.len() == LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(yv);
        }
        theta = next_theta;
        loss = next.0;
        grad = next.1;
    }

    let final_grad_norm = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
    let weights =
        Array2::from_shape_vec((classes, d), theta[..classes * d].to_vec()).unwrap();
    let bias = Array1::from_vec(theta[classes * d..].to_vec());
    Ok(ProbeModel {
        weights,
        bias,
        c_reg,
        trace: SolverTrace {
            iterations,
            converged,
            final_loss: loss,
            final_grad_norm,
        },
    })
}

/// Top-1 accuracy of a fitted probe on a feature table, with predictions.
pub fn evaluate_probe(
    model: &ProbeModel,
    table: &FeatureTable,
) -> Result<(f64, Vec<usize>), ProbeError> {
    if table.is_empty() {
        return Err(ProbeError::EmptyTable);
    }
    if model.weights.ncols() != table.features.ncols() {
        return Err(ProbeError::Dimension(format!(
            "model expects {} feature dims, table has {}",
            model.weights.ncols(),
            table.features.ncols()
        )));
    }
    if table.num_classes() > model.weights.nrows() {
        return Err(ProbeError::Dimension(format!(
            "table labels reach class {} but the model has {} classes",
            table.num_classes() - 1,
            model.weights.nrows()
        )));
    }
    let preds = predict(model, &table.features);
    let correct = preds
        .iter()
        .zip(table.labels.iter())
        .filter(|(p, l)| p == l)
        .count();
    Ok((correct as f64 / table.labels.len() as f64, preds))
}

/// Argmax predictions (ties break toward the lowest class index).
pub fn predict(model: &ProbeModel, features: &Array2<f32>) -> Vec<usize> {
    let x = features.mapv(|v| v as f64);
    let logits = x.dot(&model.weights.t());
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (c, &v) in row.iter().enumerate() {
                let v = v + model.bias[c];
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Training objective at the fitted point (used by oracle comparisons).
pub fn loss_at(model: &ProbeModel, table: &FeatureTable) -> f64 {
    let classes = model.weights.nrows();
    let d = model.weights.ncols();
    let mut theta = model.weights.clone().into_raw_vec_and_offset().0;
    theta.extend(model.bias.iter());
    let x = table.features.mapv(|v| v as f64);
    objective(&x, &table.labels, classes, model.c_reg, &theta[..classes * d + classes]).0
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}
