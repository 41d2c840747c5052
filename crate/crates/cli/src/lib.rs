//! Scenario-driven front end for the spinrotor simulations.
//!
//! Configs are JSON documents ([`config::ScenarioConfig`]); every run writes
//! its resolved config, CSV series, a `summary.json` and a `manifest.json`
//! with SHA-256 hashes of all artifacts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod manifest;
pub mod scenarios;
pub mod sweep;

pub use config::{parse_config, ScenarioConfig, ScenarioKind};
pub use error::{exit_code, ConfigError, IntegrationError, PartialSweep};
pub use manifest::OutputSink;
pub use scenarios::{run_scenario, run_to_dir, Summary};
pub use sweep::{parse_grid, run_sweep};
