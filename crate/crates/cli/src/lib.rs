//! Batch front end for quantum frequency processor experiments: experiment
//! configuration, stage operations, end-to-end pipelines and run manifests.

pub mod config;
pub mod error;
pub mod files;
pub mod ops;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use pipeline::{run_pipeline, verify_manifest, FileCheck, RunManifest};
