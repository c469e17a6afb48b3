//! Split-access guards. While a training/sampling phase is active on a
//! thread, reading a test manifest from that thread aborts loudly instead of
//! silently leaking evaluation data; an evaluation phase symmetrically bars
//! train-manifest reads (cross-dataset evaluation must never see target
//! training data). Phases are per-thread: independent runs own their worker.

use std::cell::Cell;

thread_local! {
    static TRAINING_DEPTH: Cell<usize> = const { Cell::new(0) };
    static EVALUATION_DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// RAII marker for a training or sampling phase.
pub struct TrainingPhaseGuard(());

/// RAII marker for an evaluation phase.
pub struct EvaluationPhaseGuard(());

/// Enter a training/sampling phase; test-split reads on this thread panic
/// until the guard drops.
pub fn enter_training() -> TrainingPhaseGuard {
    TRAINING_DEPTH.with(|d| d.set(d.get() + 1));
    TrainingPhaseGuard(())
}

/// Enter an evaluation phase; train-split reads on this thread panic until
/// the guard drops.
pub fn enter_evaluation() -> EvaluationPhaseGuard {
    EVALUATION_DEPTH.with(|d| d.set(d.get() + 1));
    EvaluationPhaseGuard(())
}

pub fn is_training_phase() -> bool {
    TRAINING_DEPTH.with(Cell::get) > 0
}

pub fn is_evaluation_phase() -> bool {
    EVALUATION_DEPTH.with(Cell::get) > 0
}

impl Drop for TrainingPhaseGuard {
    fn drop(&mut self) {
        TRAINING_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

impl Drop for EvaluationPhaseGuard {
    fn drop(&mut self) {
        EVALUATION_DEPTH.with(|d| d.set(d.get() - 1));
    }
}
