//! Adam training with epoch-level schedules, staged fine-tuning and
//! gradient verification.

mod gradcheck;
mod plan;
mod schedule;
mod train;

pub use gradcheck::{grad_check, grad_check_with, GradCheckable, LinearModel, ModelBatch};
pub use plan::{named_plan, named_schedules, staged_plan_two_view_cv, Phase, TrainPlan, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use schedule::{lr_at, LrSchedule, ScheduleKind};
pub use train::{evaluate, prepare_input, train, EpochRecord, Evaluation, Example, Selection, TrainHistory, TrainOptions};
