//! Class-discrimination and fluency losses, their weighted sum, and the
//! two-phase training loop.

mod fluency;
mod losses;
mod train;

pub use fluency::{fluency_loss, make_fluency_sample, FluencySample};
pub use losses::{class_discrimination_loss, total_loss};
pub use train::{
    evaluate, train_dart, train_with, Eval, HistoryRow, Phase, PhasePolicy, PromptScorer, Scorer, TrainConfig,
    TrainHistory, TrainObserver,
};

/// Probability floor inside every log.
pub const PROB_FLOOR: f32 = 1e-12;
