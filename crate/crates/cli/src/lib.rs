//! Experiment harness: run configuration, the generate/segment/train/evaluate
//! pipeline, result tables and segmentation reports.

pub mod config;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use pipeline::{run_pipeline, ResultTable, RunOutput, SubGoal, TrialRecord};
pub use report::{report_segments, SegmentReport};
