//! Command-line front end for the pipeline, plus the procedural fixtures
//! used for desk-scale runs.

pub mod app;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod pipeline;

pub use config::{RunConfig, StageSgd};
pub use error::{CliError, Result};
pub use fixtures::{make_fixtures, FixtureConfig, FixturePaths, FixtureSummary};
pub use pipeline::{desk_run, DeskOutcome};
