//! Command-line harness for the `pbgd` solvers: dataset generation,
//! γ-sweeps, landscape exports and diagnostic suites.

pub mod config;
pub mod diagnose;
pub mod error;
pub mod gen_data;
pub mod landscape;
pub mod run;
pub mod setup;
