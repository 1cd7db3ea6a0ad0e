//! Experiment harness for general rate splitting: configuration, seeded
//! sweeps over schemes, CSV results and summaries.

pub mod config;
pub mod experiment;
pub mod summary;
pub mod table;

pub use config::{ConfigError, ExperimentConfig, Scenario, Scheme};
pub use experiment::{run, write_outputs, RunOutput};
pub use summary::{ordering_violations, summarize, Summary};
pub use table::{emit_csv, parse_csv, ResultRecord, ResultTable};
