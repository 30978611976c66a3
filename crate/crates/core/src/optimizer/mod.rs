//! Minimizers and the two-stage driver.

pub mod adam;
pub mod lbfgs;
pub mod record;
pub mod schedule;
pub mod two_stage;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsMemory};
pub use record::{IterationRow, RunRecord, Stage};
pub use schedule::{update_weight, ScheduleMode, WeightSchedule};
pub use two_stage::{two_stage_run, Objective, Problem, RunState, TwoStageConfig, TwoStageRunner};
