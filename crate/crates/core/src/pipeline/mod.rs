//! End-to-end runs: per-visit training, the three experiments and their
//! reports.

pub mod experiments;
pub mod report;
pub mod run;
pub mod train;
pub mod trajectory;

pub use experiments::{
    experiment1, experiment2, experiment3, Experiment1Config, Experiment3Config, ARM_A, ARM_B,
    ARM_BASELINE,
};
pub use report::{emit_series, read_series, ExperimentReport, Metric, SeriesPoint};
pub use run::{run, RunConfig, RunOutcome};
pub use train::{split_ids, train_all, Layout, ModelConfig, Split, TrainedModels};
pub use trajectory::{
    histories, patient_summary, recommend_patient, simulate, sweep_patient, CarryMode,
    PatientSummary, Strategy,
};
