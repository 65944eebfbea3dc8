//! Toy task, training loop, evaluation and checkpoint averaging.

mod data;
mod eval;
pub mod gradcheck;
mod optim;
mod train;

pub use data::{Example, Split, TaskMode, ToyTask};
pub use eval::{RANDOM_SELECTION_STREAM, average_checkpoints, evaluate, EvalMetrics};
pub use gradcheck::{gradcheck_suite, GradcheckEntry};
pub use optim::{lr_schedule, AdamW};
pub use train::{teacher_forced_accuracy, train, EpochMetrics, Snapshot, StopReason, TrainConfig, TrainOutcome};

#[cfg(test)]
mod tests;
