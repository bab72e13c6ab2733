//! Experiment runner for the `seesaw-core` laboratory: TOML configs, CSV /
//! JSON / SVG artifacts and the built-in verification suites.

pub mod config;
pub mod output;
pub mod run;
pub mod suites;
pub mod svg;

pub use config::{load_config, parse_config, ConfigError, Engine, ExperimentConfig};
pub use output::{read_trajectory_csv, TrajectoryPoint};
pub use run::{run_experiment, RunError, RunOptions, RunSummary};
pub use suites::{builtin_suites, run_suite, SuiteOptions, SuiteOutcome};
