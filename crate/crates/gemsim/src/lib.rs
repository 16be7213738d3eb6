//! Scenario files, presets and CSV output for the `gemsim` command.

pub mod commands;
pub mod output;
pub mod presets;
pub mod scenario;

pub use commands::{Failure, Overrides, SweepParam};
pub use scenario::{parse_scenario, render, Kind, ParseError, Scenario};
