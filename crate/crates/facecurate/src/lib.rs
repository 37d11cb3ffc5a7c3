//! Orchestration for the face dataset curation pipeline: configuration, the
//! run directory, the merge review service and run comparison.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod review;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use pipeline::{compare_runs, resume_pipeline, run_pipeline, RunOptions, RunOutcome, RunSummary};
