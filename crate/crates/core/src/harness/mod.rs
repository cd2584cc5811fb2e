//! Experiment orchestration: configuration, deterministic parallel RNG
//! streams, named experiment recipes, and CSV/JSON result persistence.
//!
//! All randomness flows through [`derive_stream`]; work decompositions are
//! functions of the configuration alone, so re-running a config with the
//! same master seed reproduces byte-identical numeric CSV content at any
//! thread count.

mod config;
mod report;
mod runner;

pub use config::{AutoKeyword, ExperimentConfig, ExperimentKind, T0Rule, ThreadCount};
pub use report::{emit_plotdata, format_float, write_csv, write_json, ResultRecord, TableRef};
pub use runner::{profile_battery, run_experiment};

pub use crate::streams::{derive_stream, RngStream, MAX_STREAM_DEPTH};
