//! Experiment driver for the FedSurrogate simulator: configuration files,
//! IDX ingestion, the federated training loop, sweeps, ablations and
//! CSV/JSON reports. The algorithms themselves live in `fedsurrogate-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod idx;
pub mod report;

pub use config::{DatasetSpec, DefenseKind, ExperimentConfig};
pub use error::{IdxError, SimError};
pub use experiment::{ablate, run_experiment, sweep, RoundRecord, RunReport};
pub use report::{emit_report, Format};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "FEDSURROGATE_OUT_DIR";
