//! Config-driven driver: parse a run config, execute one pipeline, persist
//! results with a hashed manifest.

pub mod config;
pub mod output;
pub mod pipeline;

pub use config::{parse_config, ConfigError, PipelineKind, RunConfig};
pub use pipeline::{run_pipeline, FailureKind, PipelineError, RunRecord, RunStatus};
