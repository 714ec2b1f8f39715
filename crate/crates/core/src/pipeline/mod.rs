//! Orchestration: configuration, cohort splitting, synthetic cohorts,
//! per-patient processing, evaluation and the end-to-end runner.

pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod run;
pub mod split;
pub mod synth;

pub use config::{PipelineConfig, Paths, Stages, SEED_ENV};
pub use evaluate::{evaluate_segmentation, SegmentationScores};
pub use run::{exit_code, run_pipeline, EvalMetrics, PipelineError, RunReport, Stage, StageStatus};
pub use split::{centre_of, split_cohort, write_split_summary, Split, SplitAssignment};
pub use synth::{make_synthetic_cohort, mini_cohort_config, write_synthetic_cohort, SynthSpec, SyntheticCohort};
