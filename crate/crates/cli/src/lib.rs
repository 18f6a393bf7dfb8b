//! Command-line front end: CSV ingestion, pipeline orchestration and report
//! emission for `affinity-core`.

pub mod commands;
pub mod config;
pub mod emit;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod render;
pub mod report;

pub use affinity_core as core;
pub use config::{Format, OutputConfig, RunConfig, SCHEMA_VERSION};
pub use emit::{canonical_json, emit};
pub use error::{CliError, Result};
pub use ingest::{ingest_csv, write_csv, DropReport};
pub use pipeline::{build_report, estimate, run_pipeline};
pub use report::Report;
