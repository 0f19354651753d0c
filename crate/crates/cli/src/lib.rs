//! Experiment configs, sweep execution and reporting behind the `fedstream` binary.

pub mod config;
pub mod report;
pub mod run;
