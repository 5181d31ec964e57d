//! Command-line orchestration for the category-match relevance toolkit.
//!
//! Exposed as a library so integration tests can drive whole pipelines
//! in-process; the `cma` binary is a thin argument parser over these calls.

pub mod config;
pub mod manifest;
pub mod stages;

pub use config::PipelineConfig;
pub use stages::run_pipeline;
