//! Losses, the optimizer, the learning-rate schedule and the two training
//! phases.

mod loss;
mod nadam;
mod run;
mod schedule;

pub use loss::{bce, multitask_loss, tb_loss, LossConfig, LossTerms, Targets};
pub use nadam::{Nadam, NadamConfig};
pub use run::{train_phase1, train_phase2, EpochRecord, Phase1Data, Phase2Data, SelectionMetric, TrainConfig, TrainOutcome, TrainingLog};
pub use schedule::{lr_schedule_step, PlateauSchedule};
