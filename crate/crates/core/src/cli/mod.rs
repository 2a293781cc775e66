//! Batch front-end: configuration, engine dispatch and result tables.

pub mod config;
pub mod run;
pub mod table;

pub use config::{parse_config, parse_config_with, ConfigErrors, RunConfig};
pub use run::{benchmark, run, Benchmark};
pub use table::{time_to_solution, ResultTable};
