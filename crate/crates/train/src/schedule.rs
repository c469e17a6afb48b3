//! Learning-rate schedule: constant warmup for the first epoch, then cosine
//! annealing over the remaining epochs with per-step granularity.

use crate::TrainConfig;

/// Rate at (1-based) `epoch` with within-epoch progress `frac ∈ [0, 1)`.
///
/// Epoch 1 is pinned to the warmup rate. From epoch 2 the rate follows
/// `base · ½(1 + cos(π · (epoch − 2 + frac) / (epochs − 1)))`, reaching the
/// base rate at the start of epoch 2 and approaching zero at the end of the
/// final epoch.
pub fn lr_at(epoch: usize, frac: f64, cfg: &TrainConfig) -> f64 {
    debug_assert!((1..=cfg.epochs.max(1)).contains(&epoch));
    debug_assert!((0.0..=1.0).contains(&frac));
    if epoch == 1 {
        return cfg.warmup_lr;
    }
    let span = (cfg.epochs - 1) as f64;
    let progress = (epoch as f64 - 2.0 + frac) / span;
    cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}
