//! Training, checkpoint selection and experiment regimes.

pub mod plan;
pub mod regime;
pub mod report;
pub mod train;
pub mod warmup;

pub use plan::{BaseSpec, ExperimentPlan, FewShotMethod, Regime, RunSpec};
pub use regime::{prepare_base, run_plan, run_regime, ExperimentRun};
pub use report::{render_report, ExperimentReport, ReportFormat, ReportRow};
pub use train::{continue_training, train, Checkpoint, Snapshot, TrainConfig, TrainMode, TrainOutcome, Trainee};
pub use warmup::{warmup_base, WarmupConfig};
