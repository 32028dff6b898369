//! Datasets, experiment configuration and the experiment drivers behind the CLI.

pub mod config;
pub mod dataset;
pub mod experiments;

pub use config::{ComparisonConfig, EstimationSchedule, ExperimentConfig, ModelShape, SweepConfig};
pub use dataset::{generate_bars_and_stripes, ingest_binary_vectors, DatasetSpec};
