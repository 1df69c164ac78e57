//! Seeded Monte-Carlo campaigns for the phase estimators in `qpe-core`.
//!
//! A campaign draws a spectrum per trial, simulates experiments under a
//! design, and records the estimate at a list of experiment counts. Trials
//! run in parallel, each on its own random stream, so results depend only on
//! the seed.

pub mod config;
pub mod error;
pub mod recipe;
pub mod scenario;
pub mod stats;
pub mod trial;

pub use config::{ConfigFile, Overrides, Scenario, ScenarioConfig};
pub use error::{BenchError, Result};
pub use scenario::{run_campaign, run_scenario, Report};
