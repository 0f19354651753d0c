//! Experiment configuration files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use fedstream::algorithms::{Algorithm, FedConfig};
use fedstream::ingest::TRAINING_MONTHS;
use fedstream::markov;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Synth,
    Air,
}

/// A sweep over `algorithms × M × K × chain × η`, repeated for every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub algorithms: Vec<Algorithm>,
    #[serde(rename = "M")]
    pub clients: Vec<usize>,
    #[serde(rename = "K")]
    pub local_steps: Vec<usize>,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub gamma: f64,
    /// Local step size. Exclusive with `eta_per_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Local step sizes given as `b` in `η = b/K`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eta_per_k: Vec<f64>,
    pub beta: f64,
    pub lambda: f64,
    /// Synthetic only: mixing times of the client chains. Exclusive with `p`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mixing_time: Vec<u64>,
    /// Synthetic only: flip probability of the client chains.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Air only: directory of station CSV files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Air only: months of data per client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_months: Option<u32>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Chain of a synthetic cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub p: f64,
    pub tau: u64,
}

/// How a cell's `η` was specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSpec {
    Fixed(f64),
    PerK(f64),
}

impl EtaSpec {
    pub fn at(self, k: usize) -> f64 {
        match self {
            Self::Fixed(eta) => eta,
            Self::PerK(b) => b / k as f64,
        }
    }
}

/// All algorithms at one point of the sweep; written to one trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub clients: usize,
    pub local_steps: usize,
    pub chain: Option<ChainSpec>,
    pub eta: EtaSpec,
}

impl Cell {
    pub fn eta(&self) -> f64 {
        self.eta.at(self.local_steps)
    }

    pub fn file_name(&self) -> String {
        let mut name = format!("traj_M{}_K{}", self.clients, self.local_steps);
        if let Some(c) = self.chain {
            name.push_str(&format!("_tau{}", c.tau));
        }
        match self.eta {
            EtaSpec::Fixed(eta) => name.push_str(&format!("_eta{eta}")),
            EtaSpec::PerK(b) => name.push_str(&format!("_b{b}")),
        }
        name.push_str(".csv");
        name
    }

    pub fn fed_config(&self, cfg: &ExperimentConfig, algorithm: Algorithm, seed: u64, dim: usize) -> FedConfig {
        FedConfig {
            gamma: cfg.gamma,
            eta: self.eta(),
            beta: cfg.beta,
            seed,
            ..FedConfig::new(algorithm, self.clients, self.local_steps, cfg.rounds, dim)
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn eta_specs(&self) -> Vec<EtaSpec> {
        match self.eta {
            Some(eta) => vec![EtaSpec::Fixed(eta)],
            None => self.eta_per_k.iter().map(|&b| EtaSpec::PerK(b)).collect(),
        }
    }

    /// Checks everything that can be checked without data and expands the
    /// sweep in `M, K, chain, η` order.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        ensure!(!self.algorithms.is_empty(), "no algorithms listed");
        ensure!(
            self.algorithms.iter().collect::<BTreeSet<_>>().len() == self.algorithms.len(),
            "algorithms listed twice"
        );
        ensure!(!self.seeds.is_empty(), "no seeds listed");
        ensure!(self.seeds.iter().collect::<BTreeSet<_>>().len() == self.seeds.len(), "seeds listed twice");
        ensure!(!self.clients.is_empty() && !self.local_steps.is_empty(), "M and K lists must be non-empty");
        ensure!(self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be finite and non-negative");
        match (self.eta, self.eta_per_k.is_empty()) {
            (Some(_), false) => bail!("give either eta or eta_per_k, not both"),
            (None, true) => bail!("one of eta or eta_per_k is required"),
            _ => {}
        }
        let chains: Vec<Option<ChainSpec>> = match self.experiment {
            ExperimentKind::Synth => {
                ensure!(self.data.is_none() && self.n_months.is_none(), "data and n_months apply to air experiments only");
                match (self.p, self.mixing_time.is_empty()) {
                    (Some(_), false) => bail!("give either p or mixing_time, not both"),
                    (None, true) => bail!("synthetic experiments need p or mixing_time"),
                    (Some(p), true) => vec![Some(ChainSpec { p, tau: markov::tau(&markov::two_state(p)?)? })],
                    (None, false) => self
                        .mixing_time
                        .iter()
                        .map(|&tau| Ok(Some(ChainSpec { p: markov::two_state_for_mixing_time(tau)?, tau })))
                        .collect::<Result<_>>()?,
                }
            }
            ExperimentKind::Air => {
                ensure!(self.p.is_none() && self.mixing_time.is_empty(), "p and mixing_time apply to synthetic experiments only");
                let n = self.n_months.context("air experiments need n_months")?;
                ensure!((1..=TRAINING_MONTHS).contains(&n), "n_months must lie in 1..={TRAINING_MONTHS}, got {n}");
                vec![None]
            }
        };
        let mut cells = Vec::new();
        for &clients in &self.clients {
            for &local_steps in &self.local_steps {
                for &chain in &chains {
                    for eta in self.eta_specs() {
                        cells.push(Cell { clients, local_steps, chain, eta });
                    }
                }
            }
        }
        for cell in &cells {
            for &alg in &self.algorithms {
                cell.fed_config(self, alg, 0, 1)
                    .validate()
                    .with_context(|| format!("{alg} at M={}, K={}", cell.clients, cell.local_steps))?;
            }
        }
        Ok(cells)
    }
}

/// Parses `"0,1,2"` or `"0..10"`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        ensure!(a < b, "empty seed range {s}");
        return Ok((a..b).collect());
    }
    s.split(',').map(|v| v.trim().parse().with_context(|| format!("bad seed {v:?}"))).collect()
}
