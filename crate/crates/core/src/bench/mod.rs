//! Benchmark harness: ingestion, configuration, seeded sweeps and CSV output.

pub mod config;
pub mod experiment;
pub mod ingest;
pub mod report;
pub mod synthetic;

pub use config::{ExperimentConfig, GridSampler, KernelName};
pub use experiment::{run_experiment, run_on_dataset, split_dataset, split_indices, RunRecord};
pub use ingest::{ingest, DataFormat, IngestOptions};
pub use report::{emit_csv, emit_summary, read_records, records_to_csv, summary_to_csv};
