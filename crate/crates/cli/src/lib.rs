//! Batch front-end for soficlab-core: JSON experiment configs in, JSON
//! reports and trace CSVs out.

pub mod config;
pub mod report;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, Op};
pub use report::{read_trace_csv, write_trace_csv, RunReport};
pub use run::{execute, prepare, RunError};
