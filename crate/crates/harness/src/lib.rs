//! Scenario harness for the growth simulator: TOML scenarios, trajectory
//! and Q-table CSVs, run metrics and side-by-side controller comparison.

pub mod config;
pub mod csvio;
pub mod report;
pub mod run;

pub use config::{ConfigError, ControllerKind, Scenario};
pub use report::RunReport;
pub use run::{compare, run_controller, RunError, RunOutput};
