//! Experiment orchestration: configuration, the seeded replication loop,
//! on-disk persistence with a hashed manifest, analysis of finished runs and
//! static report generation.
//!
//! A run is fully determined by its [`config::ExperimentConfig`]; the
//! manifest written next to the outputs embeds that config, so a run can be
//! reproduced from its manifest alone.

pub mod analyze;
pub mod cli;
pub mod config;
pub mod error;
pub mod load;
pub mod report;
pub mod run;

pub use config::{replication_seeds, Condition, ExperimentConfig, ReplicationSeeds};
pub use error::{Error, Result};
pub use run::{run_experiment, verify_manifest, RunManifest, Stages};
