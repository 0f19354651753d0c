//! The four federated procedures over a shared round loop.
//!
//! Every client routine accumulates its local directions into a running sum
//! `S_m` and keeps its local iterate as `w_t − η·S_m`; it reports the average
//! direction `D_m = S_m / K`. The server then applies
//! `w_{t+1} = w_t − step · (Σ_m D_m) / M` with a per-algorithm `step`
//! (`γ` for Minibatch and Local SGD-M, `ηK` for Local SGD and SCAFFOLD).
//! Writing all four this way makes the textbook reductions between them
//! (Local SGD with `K = 1`, Local SGD-M with `β = 1, γ = ηK`, SCAFFOLD with
//! zero control variates) hold bit-for-bit, not just up to rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objectives::{norm_sq, FederatedProblem, SampleStream};
use crate::rng::{below, Domain, RngKey};

/// `‖w‖∞` beyond this counts as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgoError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{expected} client streams required, got {got}")]
    StreamCount { expected: usize, got: usize },
    #[error("diverged in round {round}")]
    Diverged { round: usize },
}

pub type Result<T> = std::result::Result<T, AlgoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Minibatch,
    LocalSgd,
    LocalSgdM,
    Scaffold,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Minibatch, Self::LocalSgd, Self::LocalSgdM, Self::Scaffold];

    pub fn name(self) -> &'static str {
        match self {
            Self::Minibatch => "minibatch",
            Self::LocalSgd => "local_sgd",
            Self::LocalSgdM => "local_sgd_m",
            Self::Scaffold => "scaffold",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = AlgoError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| AlgoError::InvalidConfig(format!("unknown algorithm {s:?}")))
    }
}

/// Hyperparameters of one run. The regularization weight lives in the
/// problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub algorithm: Algorithm,
    pub clients: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub gamma: f64,
    pub eta: f64,
    pub beta: f64,
    pub seed: u64,
    pub w0: Vec<f64>,
}

impl FedConfig {
    /// Zero initial model of dimension `dim`.
    pub fn new(algorithm: Algorithm, clients: usize, local_steps: usize, rounds: usize, dim: usize) -> Self {
        Self { algorithm, clients, local_steps, rounds, gamma: 0.01, eta: 0.001, beta: 0.1, seed: 0, w0: vec![0.0; dim] }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AlgoError::InvalidConfig(msg));
        if self.clients == 0 || self.local_steps == 0 || self.rounds == 0 {
            return bad(format!(
                "M, K, T must be positive (got M={}, K={}, T={})",
                self.clients, self.local_steps, self.rounds
            ));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("step sizes must be finite and non-negative (gamma={}, eta={})", self.gamma, self.eta));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("momentum {} outside (0, 1]", self.beta));
        }
        if matches!(self.algorithm, Algorithm::LocalSgdM | Algorithm::Scaffold) && self.eta == 0.0 {
            return bad(format!("{} divides by the local step size; eta must be positive", self.algorithm));
        }
        if self.w0.iter().any(|v| !v.is_finite()) {
            return bad("initial model has non-finite entries".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub grad_norm_sq: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryResult {
    /// Metrics at `w_0, …, w_{T−1}`.
    pub records: Vec<RoundRecord>,
    /// `w_T`.
    pub final_iterate: Vec<f64>,
    pub output_iterate: Vec<f64>,
    pub output_index: usize,
}

/// Uniform index in `[0, rounds)` from the run's output substream.
pub fn select_output(rounds: usize, key: RngKey) -> usize {
    assert!(rounds >= 1, "need at least one round");
    below(&mut key.rng(), rounds as u64) as usize
}

/// Per-client state carried across rounds.
#[derive(Debug, Clone)]
struct ClientState {
    control: Vec<f64>,
}

/// Read-only per-round context shared by all clients.
struct RoundCtx<'a> {
    algorithm: Algorithm,
    w: &'a [f64],
    eta: f64,
    beta: f64,
    k: usize,
    /// Previous aggregated direction (momentum) or server control variate.
    server_dir: &'a [f64],
}

/// Runs `K` local steps and returns `D_m = S_m / K`.
fn client_round<P, S>(problem: &P, m: usize, ctx: &RoundCtx<'_>, stream: &mut S, state: &ClientState) -> Vec<f64>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    let d = ctx.w.len();
    let mut sum = vec![0.0; d];
    let mut local = ctx.w.to_vec();
    let mut g = vec![0.0; d];
    let momentum_mix = 1.0 - ctx.beta;
    for _ in 0..ctx.k {
        let sample = stream.next_sample();
        match ctx.algorithm {
            Algorithm::Minibatch => {
                problem.sample_grad(m, ctx.w, &sample, &mut g);
                for (s, gi) in sum.iter_mut().zip(&g) {
                    *s += gi;
                }
            }
            Algorithm::LocalSgd => {
                problem.sample_grad(m, &local, &sample, &mut g);
                for (s, gi) in sum.iter_mut().zip(&g) {
                    *s += gi;
                }
            }
            Algorithm::LocalSgdM => {
                problem.sample_grad(m, &local, &sample, &mut g);
                for ((s, gi), vt) in sum.iter_mut().zip(&g).zip(ctx.server_dir) {
                    *s += ctx.beta * gi + momentum_mix * vt;
                }
            }
            Algorithm::Scaffold => {
                problem.sample_grad(m, &local, &sample, &mut g);
                for (((s, gi), cm), c) in sum.iter_mut().zip(&g).zip(&state.control).zip(ctx.server_dir) {
                    *s += gi - cm + c;
                }
            }
        }
        if ctx.algorithm != Algorithm::Minibatch {
            for ((l, w), s) in local.iter_mut().zip(ctx.w).zip(&sum) {
                *l = w - ctx.eta * s;
            }
        }
    }
    let k = ctx.k as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    sum
}

#[cfg(feature = "parallel")]
fn map_clients<P, S>(
    problem: &P,
    ctx: &RoundCtx<'_>,
    streams: &mut [S],
    states: &[ClientState],
    parallel: bool,
) -> Vec<Vec<f64>>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    use rayon::prelude::*;
    if parallel {
        streams
            .par_iter_mut()
            .zip(states.par_iter())
            .enumerate()
            .map(|(m, (s, st))| client_round(problem, m, ctx, s, st))
            .collect()
    } else {
        streams.iter_mut().zip(states).enumerate().map(|(m, (s, st))| client_round(problem, m, ctx, s, st)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn map_clients<P, S>(
    problem: &P,
    ctx: &RoundCtx<'_>,
    streams: &mut [S],
    states: &[ClientState],
    _parallel: bool,
) -> Vec<Vec<f64>>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    streams.iter_mut().zip(states).enumerate().map(|(m, (s, st))| client_round(problem, m, ctx, s, st)).collect()
}

/// Execution knobs that never change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    /// Run clients on the rayon pool when a round has at least this many
    /// sample-gradient evaluations.
    pub parallel_threshold: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { parallel_threshold: 20_000 }
    }
}

impl Schedule {
    pub fn sequential() -> Self {
        Self { parallel_threshold: usize::MAX }
    }

    pub fn always_parallel() -> Self {
        Self { parallel_threshold: 0 }
    }
}

/// Runs `config.algorithm`.
pub fn run<P, S>(config: &FedConfig, problem: &P, streams: &mut [S]) -> Result<TrajectoryResult>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    run_with(config, problem, streams, Schedule::default())
}

pub fn run_with<P, S>(config: &FedConfig, problem: &P, streams: &mut [S], schedule: Schedule) -> Result<TrajectoryResult>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    config.validate()?;
    let m_count = config.clients;
    if problem.num_clients() != m_count {
        return Err(AlgoError::InvalidConfig(format!(
            "config has {m_count} clients but the problem has {}",
            problem.num_clients()
        )));
    }
    if streams.len() != m_count {
        return Err(AlgoError::StreamCount { expected: m_count, got: streams.len() });
    }
    if config.w0.len() != problem.dim() {
        return Err(AlgoError::InvalidConfig(format!(
            "initial model has dimension {}, problem needs {}",
            config.w0.len(),
            problem.dim()
        )));
    }
    let d = problem.dim();
    let k = config.local_steps;
    let output_index = select_output(config.rounds, RngKey::new(config.seed, Domain::Output, 0));
    let step = match config.algorithm {
        Algorithm::Minibatch | Algorithm::LocalSgdM => config.gamma,
        // γ_s = 1 for SCAFFOLD: w_t + (1/M) Σ (w^{(m,K)} − w_t)
        Algorithm::LocalSgd | Algorithm::Scaffold => config.eta * k as f64,
    };
    let parallel = m_count > 1 && m_count.saturating_mul(k) >= schedule.parallel_threshold;

    let mut w = config.w0.clone();
    // v_t for momentum, c for SCAFFOLD
    let mut server_dir = vec![0.0; d];
    let mut states = vec![ClientState { control: vec![0.0; d] }; m_count];
    let mut records = Vec::with_capacity(config.rounds);
    let mut output_iterate = None;

    for t in 0..config.rounds {
        let grad = problem.full_grad(&w);
        let grad_norm_sq = norm_sq(&grad);
        let train_loss = problem.full_loss(&w);
        if !grad_norm_sq.is_finite() || !train_loss.is_finite() {
            return Err(AlgoError::Diverged { round: t });
        }
        records.push(RoundRecord { t, grad_norm_sq, train_loss });
        if t == output_index {
            output_iterate = Some(w.clone());
        }

        let ctx = RoundCtx {
            algorithm: config.algorithm,
            w: &w,
            eta: config.eta,
            beta: config.beta,
            k,
            server_dir: &server_dir,
        };
        let directions = map_clients(problem, &ctx, streams, &states, parallel);

        let mut mean = vec![0.0; d];
        for dm in &directions {
            for (a, b) in mean.iter_mut().zip(dm) {
                *a += b;
            }
        }
        let m_f = m_count as f64;
        mean.iter_mut().for_each(|a| *a /= m_f);

        match config.algorithm {
            Algorithm::LocalSgdM => server_dir.copy_from_slice(&mean),
            Algorithm::Scaffold => {
                // c_m⁺ = c_m − c + (w_t − w^{(m,K)}) / (Kη) = c_m − c + D_m
                let mut delta = vec![0.0; d];
                for (st, dm) in states.iter_mut().zip(&directions) {
                    for ((cm, di), (c, acc)) in st.control.iter_mut().zip(dm).zip(server_dir.iter().zip(delta.iter_mut())) {
                        let updated = *cm - c + di;
                        *acc += updated - *cm;
                        *cm = updated;
                    }
                }
                for (c, acc) in server_dir.iter_mut().zip(&delta) {
                    *c += acc / m_f;
                }
            }
            _ => {}
        }
        for (wi, a) in w.iter_mut().zip(&mean) {
            *wi -= step * a;
        }
        if w.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(AlgoError::Diverged { round: t });
        }
    }

    Ok(TrajectoryResult {
        records,
        final_iterate: w,
        output_iterate: output_iterate.expect("output index lies in [0, T)"),
        output_index,
    })
}

fn run_as<P, S>(algorithm: Algorithm, config: &FedConfig, problem: &P, streams: &mut [S]) -> Result<TrajectoryResult>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    let mut c = config.clone();
    c.algorithm = algorithm;
    run(&c, problem, streams)
}

/// Server step on the client-averaged gradient at the frozen model.
pub fn run_minibatch_sgd<P, S>(config: &FedConfig, problem: &P, streams: &mut [S]) -> Result<TrajectoryResult>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    run_as(Algorithm::Minibatch, config, problem, streams)
}

/// `K` local SGD steps per client, then model averaging.
pub fn run_local_sgd<P, S>(config: &FedConfig, problem: &P, streams: &mut [S]) -> Result<TrajectoryResult>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    run_as(Algorithm::LocalSgd, config, problem, streams)
}

/// Local steps along `β∇f + (1 − β)v_t`; `v_0 = 0`.
pub fn run_local_sgd_momentum<P, S>(config: &FedConfig, problem: &P, streams: &mut [S]) -> Result<TrajectoryResult>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    run_as(Algorithm::LocalSgdM, config, problem, streams)
}

/// Full participation SCAFFOLD with option-II control variates.
pub fn run_scaffold<P, S>(config: &FedConfig, problem: &P, streams: &mut [S]) -> Result<TrajectoryResult>
where
    P: FederatedProblem,
    S: SampleStream<Sample = P::Sample>,
{
    run_as(Algorithm::Scaffold, config, problem, streams)
}

/// One line of the trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub seed: u64,
    pub algorithm: Algorithm,
    #[serde(rename = "M")]
    pub clients: usize,
    #[serde(rename = "K")]
    pub local_steps: usize,
    pub t: usize,
    pub grad_norm_sq: f64,
    pub train_loss: f64,
}

pub fn trajectory_rows(config: &FedConfig, result: &TrajectoryResult) -> Vec<TrajectoryRow> {
    result
        .records
        .iter()
        .map(|r| TrajectoryRow {
            seed: config.seed,
            algorithm: config.algorithm,
            clients: config.clients,
            local_steps: config.local_steps,
            t: r.t,
            grad_norm_sq: r.grad_norm_sq,
            train_loss: r.train_loss,
        })
        .collect()
}
