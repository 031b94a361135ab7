//! Two-stage orchestration, evaluation, and the comparison drivers.

mod alignment;
mod config;
mod experiments;
mod metrics;
mod output;
mod train;

pub use alignment::AlignmentSpec;
pub use config::{DataConfig, DistillConfig, RunConfig, TrainConfig, SEED_ENV};
pub use experiments::{
    parse_spec_list, run_ablation, run_alignment_sweep, ArmResult, ComparisonTable, Removal, TableRow,
};
pub use metrics::{MetricRecord, RunMetrics, Stage, Timing};
pub use output::{write_run, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE, TIMING_FILE, VOCAB_FILE};
pub use train::{
    accuracy, distill_target, distill_with, prepare, train_inspirer, train_supervised, Prepared, Teacher, Trained,
};
