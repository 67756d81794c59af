//! Scenario files, CSV artifacts and the run driver behind the `beamvi`
//! binary.

pub mod config;
pub mod output;
pub mod scenario;
