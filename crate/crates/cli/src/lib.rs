//! Configuration, experiment suites and output files for `chb-core`.
//!
//! A run is one TOML document (see [`config::RunConfig`]) naming an
//! experiment. [`run::run`] executes it and writes delimited text, JSON
//! reports, plot data and a SHA-256 manifest. Outputs are byte-identical
//! for a given config whatever the worker count.

pub mod config;
pub mod output;
pub mod run;
pub mod suites;

pub use config::{parse_config, ConfigError, ExperimentKind, RunConfig};
pub use run::{run, with_threads, RunSummary};
