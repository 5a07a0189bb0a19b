//! Scenario files, single runs and the two experiment sweeps (rank count and
//! load imbalance) with their CSV and text outputs.

pub mod config;
pub mod profiles;
pub mod runner;

pub use config::{parse_config, serialize_config, ConfigError, Driver, Scenario};
pub use profiles::{builtin_profiles, parse_profiles, LoadProfile};
pub use runner::{run_scenario, sweep_imbalance, sweep_ranks, ResultRow, RunError, RESULT_COLUMNS};
