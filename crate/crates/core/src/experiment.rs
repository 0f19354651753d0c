//! Synthetic runs and seed summaries shared by the CLI and the test suites.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithms::{self, AlgoError, FedConfig, TrajectoryResult};
use crate::markov::{self, ChainError};
use crate::objectives::{self, ObjectiveError, SynthStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Runs `config` on the synthetic instance drawn from `config.seed`, every
/// client following `two_state(p)` from a stationary start.
pub fn run_synthetic(config: &FedConfig, p: f64, lambda: f64) -> Result<TrajectoryResult, ExperimentError> {
    let problem = objectives::generate_synthetic(config.seed, config.clients, p, lambda)?;
    let mut streams = synthetic_streams(&problem, config.seed)?;
    Ok(algorithms::run(config, &problem, &mut streams)?)
}

/// One stationary-start stream per client of `problem`.
pub fn synthetic_streams(problem: &objectives::SyntheticProblem, seed: u64) -> Result<Vec<SynthStream>, ExperimentError> {
    let kernel = Arc::new(problem.kernel()?);
    let pi = markov::stationary(&kernel)?;
    (0..problem.clients.len())
        .map(|m| problem.stream(m, kernel.clone(), &pi, seed).map_err(ExperimentError::from))
        .collect()
}

/// Mean and 95% normal-approximation half-width over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub n: usize,
    pub mean: f64,
    pub ci_halfwidth: f64,
}

impl SeedSummary {
    pub fn lower(&self) -> f64 {
        self.mean - self.ci_halfwidth
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.ci_halfwidth
    }

    /// Whether the two intervals share a point.
    pub fn overlaps(&self, other: &SeedSummary) -> bool {
        self.lower() <= other.upper() && other.lower() <= self.upper()
    }
}

/// `1.96 · s/√n` with the sample standard deviation `s`; zero for `n = 1`.
pub fn summarize(values: &[f64]) -> Option<SeedSummary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ci_halfwidth = if n < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    };
    Some(SeedSummary { n, mean, ci_halfwidth })
}
