//! Client losses and their analytic gradients.
//!
//! Two problem families share the [`FederatedProblem`] interface used by the
//! round loop:
//!
//! * [`SyntheticProblem`]: each client observes `x = w_{m,i}ᵀV_{m,i} + ε`
//!   while a two-state chain picks `i`, with squared-error loss plus the
//!   non-convex regularizer.
//! * [`RegressionProblem`]: linear regression on contiguous windows of a
//!   preprocessed hourly dataset.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{self, ChainError, Distribution, FiniteKernel, StreamCursor};
use crate::rng::{uniform, Domain, RngKey};

pub const SYNTH_DIM: usize = 10;
pub const REGRESSION_DIM: usize = 9;
pub const NOISE_LOW: f64 = 0.0;
pub const NOISE_HIGH: f64 = 0.01;
pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

/// `r(w) = ½ Σ wᵢ² / (1 + wᵢ²)`.
pub fn reg_value(w: &[f64]) -> f64 {
    0.5 * w.iter().map(|x| x * x / (1.0 + x * x)).sum::<f64>()
}

pub fn reg_grad(w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    add_reg_grad(w, 1.0, &mut out);
    out
}

/// `out += scale · ∇r(w)`, with `∂r/∂wᵢ = wᵢ / (1 + wᵢ²)²`.
#[inline]
pub fn add_reg_grad(w: &[f64], scale: f64, out: &mut [f64]) {
    if scale == 0.0 {
        return;
    }
    for (o, &x) in out.iter_mut().zip(w) {
        let d = 1.0 + x * x;
        *o += scale * x / (d * d);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

/// A federated objective whose clients consume samples of type `Sample`.
pub trait FederatedProblem: Sync {
    type Sample: Copy + Send + Sync;

    fn num_clients(&self) -> usize;
    fn dim(&self) -> usize;

    /// Overwrites `out` with `∇f_m(w; x)`.
    fn sample_grad(&self, client: usize, w: &[f64], sample: &Self::Sample, out: &mut [f64]);

    /// `∇F_m(w)`.
    fn client_grad(&self, client: usize, w: &[f64]) -> Vec<f64>;

    /// `F_m(w)`.
    fn client_loss(&self, client: usize, w: &[f64]) -> f64;

    /// Samples whose gradients bound the noise of client `m`.
    fn sample_support(&self, client: usize) -> Vec<Self::Sample>;

    /// `∇F(w) = (1/M) Σ_m ∇F_m(w)`, summed in client order.
    fn full_grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for m in 0..self.num_clients() {
            axpy(1.0, &self.client_grad(m, w), &mut g);
        }
        let inv = 1.0 / self.num_clients() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        g
    }

    fn full_loss(&self, w: &[f64]) -> f64 {
        (0..self.num_clients()).map(|m| self.client_loss(m, w)).sum::<f64>() / self.num_clients() as f64
    }
}

/// A client's source of samples.
pub trait SampleStream: Send {
    type Sample;
    fn next_sample(&mut self) -> Self::Sample;
    /// Samples drawn so far.
    fn consumed(&self) -> u64;
}

// ---------------------------------------------------------------------------
// Synthetic two-state problem

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticClient {
    /// `V_{m,i}` for the two chain states.
    pub v: [Vec<f64>; 2],
    /// `w_{m,i}` for the two chain states.
    pub w_opt: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub seed: u64,
    pub p: f64,
    pub lambda: f64,
    pub noise_low: f64,
    pub noise_high: f64,
    pub clients: Vec<SyntheticClient>,
}

/// One synthetic observation: the chain state and the additive noise draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSample {
    pub state: usize,
    pub noise: f64,
}

/// Draws the per-seed instance.
///
/// The shared optimum levels are drawn first (state 0: `U(0,1)` then
/// `U(1,2)`, same for state 1), then `V` for each client and state. The
/// first `⌈d/2⌉` coordinates of every `w_{m,i}` take the `U(0,1)` level.
pub fn generate_synthetic(seed: u64, clients: usize, p: f64, lambda: f64) -> Result<SyntheticProblem> {
    if clients == 0 {
        return Err(ObjectiveError::InvalidParameter("need at least one client".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(ObjectiveError::InvalidParameter(format!("flip probability {p} outside (0, 1)")));
    }
    let mut rng = RngKey::new(seed, Domain::Generator, 0).rng();
    let split = SYNTH_DIM.div_ceil(2);
    let levels: [(f64, f64); 2] = std::array::from_fn(|_| {
        let low = uniform(&mut rng, 0.0, 1.0);
        let high = uniform(&mut rng, 1.0, 2.0);
        (low, high)
    });
    let w_opt: [Vec<f64>; 2] = std::array::from_fn(|i| {
        (0..SYNTH_DIM).map(|j| if j < split { levels[i].0 } else { levels[i].1 }).collect()
    });
    let clients = (0..clients)
        .map(|_| SyntheticClient {
            v: std::array::from_fn(|_| (0..SYNTH_DIM).map(|_| uniform(&mut rng, 0.0, 1.0)).collect()),
            w_opt: w_opt.clone(),
        })
        .collect();
    Ok(SyntheticProblem { seed, p, lambda, noise_low: NOISE_LOW, noise_high: NOISE_HIGH, clients })
}

impl SyntheticProblem {
    pub fn kernel(&self) -> Result<FiniteKernel> {
        Ok(markov::two_state(self.p)?)
    }

    pub fn noise_mean(&self) -> f64 {
        0.5 * (self.noise_low + self.noise_high)
    }

    /// Keeps the first `clients` clients.
    pub fn truncated(&self, clients: usize) -> Self {
        let mut out = self.clone();
        out.clients.truncate(clients);
        out
    }

    /// `2 (wᵀV − obs) V + λ∇r(w)` with `obs = w_optᵀV + noise`.
    pub fn sample_grad_into(&self, m: usize, state: usize, noise: f64, w: &[f64], out: &mut [f64]) {
        let c = &self.clients[m];
        let v = &c.v[state];
        let mut residual = -noise;
        for ((wi, oi), vi) in w.iter().zip(&c.w_opt[state]).zip(v) {
            residual += (wi - oi) * vi;
        }
        for (o, vi) in out.iter_mut().zip(v) {
            *o = 2.0 * residual * vi;
        }
        add_reg_grad(w, self.lambda, out);
    }

    /// Exact expectation of the sample gradient when the state follows `pi`
    /// and the noise is uniform.
    pub fn stationary_grad(&self, m: usize, pi: &[f64], w: &[f64]) -> Vec<f64> {
        let c = &self.clients[m];
        let mut g = vec![0.0; w.len()];
        for (i, &weight) in pi.iter().enumerate() {
            let r = dot(w, &c.v[i]) - dot(&c.w_opt[i], &c.v[i]) - self.noise_mean();
            axpy(2.0 * weight * r, &c.v[i], &mut g);
        }
        add_reg_grad(w, self.lambda, &mut g);
        g
    }

    /// `F_m(w) = ½ Σᵢ ((w − w_{m,i})ᵀV_{m,i})² + λ r(w)`.
    pub fn local_loss(&self, m: usize, w: &[f64]) -> f64 {
        let c = &self.clients[m];
        let quad: f64 = (0..2)
            .map(|i| {
                let r: f64 = w.iter().zip(&c.w_opt[i]).zip(&c.v[i]).map(|((a, b), v)| (a - b) * v).sum();
                0.5 * r * r
            })
            .sum();
        quad + self.lambda * reg_value(w)
    }

    /// Stream for client `m`: chain substream, noise substream, and a start
    /// state drawn from `initial`.
    pub fn stream(&self, m: usize, kernel: Arc<FiniteKernel>, initial: &Distribution, seed: u64) -> Result<SynthStream> {
        let cursor = StreamCursor::with_initial(
            kernel,
            initial,
            RngKey::new(seed, Domain::InitialState, m as u64),
            RngKey::new(seed, Domain::Chain, m as u64),
        )?;
        Ok(SynthStream {
            cursor,
            noise: RngKey::new(seed, Domain::Noise, m as u64).rng(),
            low: self.noise_low,
            high: self.noise_high,
        })
    }
}

pub fn synth_sample_grad(problem: &SyntheticProblem, m: usize, state: usize, noise: f64, w: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    problem.sample_grad_into(m, state, noise, w, &mut out);
    out
}

/// Gradient of `F_m` (noise-free population objective).
pub fn synth_true_grad(problem: &SyntheticProblem, m: usize, w: &[f64]) -> Vec<f64> {
    let c = &problem.clients[m];
    let mut g = vec![0.0; w.len()];
    for i in 0..2 {
        let r: f64 = w.iter().zip(&c.w_opt[i]).zip(&c.v[i]).map(|((a, b), v)| (a - b) * v).sum();
        axpy(r, &c.v[i], &mut g);
    }
    add_reg_grad(w, problem.lambda, &mut g);
    g
}

impl FederatedProblem for SyntheticProblem {
    type Sample = SynthSample;

    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        SYNTH_DIM
    }

    #[inline]
    fn sample_grad(&self, client: usize, w: &[f64], sample: &SynthSample, out: &mut [f64]) {
        self.sample_grad_into(client, sample.state, sample.noise, w, out);
    }

    fn client_grad(&self, client: usize, w: &[f64]) -> Vec<f64> {
        synth_true_grad(self, client, w)
    }

    fn client_loss(&self, client: usize, w: &[f64]) -> f64 {
        self.local_loss(client, w)
    }

    fn sample_support(&self, _client: usize) -> Vec<SynthSample> {
        let grid = 5;
        (0..2)
            .flat_map(|state| {
                (0..grid).map(move |j| (state, j as f64 / (grid - 1) as f64))
            })
            .map(|(state, frac)| SynthSample { state, noise: self.noise_low + frac * (self.noise_high - self.noise_low) })
            .collect()
    }
}

/// Markov chain state plus i.i.d. uniform observation noise.
#[derive(Debug, Clone)]
pub struct SynthStream {
    cursor: StreamCursor,
    noise: ChaCha8Rng,
    low: f64,
    high: f64,
}

impl SynthStream {
    pub fn cursor(&self) -> &StreamCursor {
        &self.cursor
    }
}

impl SampleStream for SynthStream {
    type Sample = SynthSample;

    #[inline]
    fn next_sample(&mut self) -> SynthSample {
        let state = self.cursor.step();
        let noise = uniform(&mut self.noise, self.low, self.high);
        SynthSample { state, noise }
    }

    fn consumed(&self) -> u64 {
        self.cursor.counter()
    }
}

// ---------------------------------------------------------------------------
// Air-quality regression

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionSample {
    pub x: [f64; REGRESSION_DIM],
    pub y: f64,
}

/// `2 (wᵀx − y) x + λ∇r(w)`.
pub fn regression_sample_grad(w: &[f64], x: &[f64], y: f64, lambda: f64) -> Result<Vec<f64>> {
    if w.len() != x.len() {
        return Err(ObjectiveError::Shape { expected: w.len(), got: x.len() });
    }
    let mut out = vec![0.0; w.len()];
    regression_grad_into(w, x, y, lambda, &mut out);
    Ok(out)
}

#[inline]
fn regression_grad_into(w: &[f64], x: &[f64], y: f64, lambda: f64, out: &mut [f64]) {
    let r = dot(w, x) - y;
    for (o, xi) in out.iter_mut().zip(x) {
        *o = 2.0 * r * xi;
    }
    add_reg_grad(w, lambda, out);
}

/// `(wᵀx − y)² + λ r(w)`.
pub fn regression_sample_loss(w: &[f64], x: &[f64], y: f64, lambda: f64) -> f64 {
    let r = dot(w, x) - y;
    r * r + lambda * reg_value(w)
}

/// Second-moment statistics of one client's window.
#[derive(Debug, Clone, PartialEq)]
struct WindowMoments {
    xx: Vec<f64>,
    xy: Vec<f64>,
    yy: f64,
}

impl WindowMoments {
    fn new(rows: &[RegressionSample]) -> Self {
        let d = REGRESSION_DIM;
        let mut xx = vec![0.0; d * d];
        let mut xy = vec![0.0; d];
        let mut yy = 0.0;
        for s in rows {
            for i in 0..d {
                xy[i] += s.x[i] * s.y;
                for j in 0..d {
                    xx[i * d + j] += s.x[i] * s.x[j];
                }
            }
            yy += s.y * s.y;
        }
        let inv = 1.0 / rows.len() as f64;
        xx.iter_mut().for_each(|v| *v *= inv);
        xy.iter_mut().for_each(|v| *v *= inv);
        Self { xx, xy, yy: yy * inv }
    }
}

/// One virtual client: a contiguous run of rows it reads in order.
#[derive(Debug, Clone)]
pub struct RegressionClient {
    pub rows: Arc<[RegressionSample]>,
    moments: WindowMoments,
}

impl RegressionClient {
    pub fn new(rows: Arc<[RegressionSample]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(ObjectiveError::InvalidParameter("client window has no rows".into()));
        }
        let moments = WindowMoments::new(&rows);
        Ok(Self { rows, moments })
    }
}

/// Clients' local objectives are the empirical risk over their windows.
#[derive(Debug, Clone)]
pub struct RegressionProblem {
    pub lambda: f64,
    pub clients: Vec<RegressionClient>,
}

impl RegressionProblem {
    pub fn new(clients: Vec<RegressionClient>, lambda: f64) -> Result<Self> {
        if clients.is_empty() {
            return Err(ObjectiveError::InvalidParameter("need at least one client".into()));
        }
        Ok(Self { lambda, clients })
    }

    /// Sequential reader over client `m`'s window, wrapping at the end.
    pub fn stream(&self, m: usize) -> WindowStream {
        WindowStream { len: self.clients[m].rows.len(), pos: 0, consumed: 0 }
    }
}

impl FederatedProblem for RegressionProblem {
    /// Row index within the client's window.
    type Sample = usize;

    fn num_clients(&self) -> usize {
        self.clients.len()
    }

    fn dim(&self) -> usize {
        REGRESSION_DIM
    }

    #[inline]
    fn sample_grad(&self, client: usize, w: &[f64], sample: &usize, out: &mut [f64]) {
        let s = &self.clients[client].rows[*sample];
        regression_grad_into(w, &s.x, s.y, self.lambda, out);
    }

    /// `2 (E[xxᵀ] w − E[xy]) + λ∇r(w)`.
    fn client_grad(&self, client: usize, w: &[f64]) -> Vec<f64> {
        let m = &self.clients[client].moments;
        let d = REGRESSION_DIM;
        let mut g: Vec<f64> = (0..d).map(|i| 2.0 * (dot(&m.xx[i * d..(i + 1) * d], w) - m.xy[i])).collect();
        add_reg_grad(w, self.lambda, &mut g);
        g
    }

    fn client_loss(&self, client: usize, w: &[f64]) -> f64 {
        let m = &self.clients[client].moments;
        let d = REGRESSION_DIM;
        let quad: f64 = (0..d).map(|i| w[i] * dot(&m.xx[i * d..(i + 1) * d], w)).sum();
        quad - 2.0 * dot(&m.xy, w) + m.yy + self.lambda * reg_value(w)
    }

    fn sample_support(&self, client: usize) -> Vec<usize> {
        (0..self.clients[client].rows.len()).collect()
    }
}

/// Reads a window front to back, `K` rows per round, restarting at the
/// window start when exhausted.
#[derive(Debug, Clone)]
pub struct WindowStream {
    len: usize,
    pos: usize,
    consumed: u64,
}

impl SampleStream for WindowStream {
    type Sample = usize;

    #[inline]
    fn next_sample(&mut self) -> usize {
        let i = self.pos;
        self.pos = if self.pos + 1 == self.len { 0 } else { self.pos + 1 };
        self.consumed += 1;
        i
    }

    fn consumed(&self) -> u64 {
        self.consumed
    }
}
