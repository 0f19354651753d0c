//! Finite-state Markov chains: kernels, stream sampling and the mixing
//! diagnostics (stationary law, mixing time, pseudo spectral gap, C∞) that
//! feed the convergence bounds.

use std::io::Read;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{unit_f64, RngKey};

/// Row sums must match 1 to this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Singular values below this count towards the null space of `Pᵀ − I`.
pub const NULLSPACE_TOL: f64 = 1e-9;
/// Default search cap for [`mixing_time`].
pub const DEFAULT_MIXING_CAP: u64 = 10_000_000;
/// Threshold defining τ.
pub const QUARTER: f64 = 0.25;
/// Slack when comparing `d(t)` with a threshold, so exact boundary cases
/// such as `d(2) = 1/4` for `two_state(1/4)` are not lost to rounding.
pub const TV_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} is not a probability")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate chain: stationary distribution is not unique (null space dimension {nullity})")]
    Degenerate { nullity: usize },
    #[error("chain did not mix within {cap} steps")]
    NotMixed { cap: u64 },
    #[error("unsupported chain: {0}")]
    Unsupported(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("absolute continuity violated: P({x}, {y}) > 0 but π({y}) = 0")]
    ViolatedAssumption { x: usize, y: usize },
    #[error("kernel csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, ChainError>;

/// Row-stochastic transition matrix of a finite chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct FiniteKernel {
    n: usize,
    rows: Vec<f64>,
}

impl FiniteKernel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(ChainError::Shape("kernel has no states".into()));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ChainError::Shape(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(n, flat)
    }

    pub fn from_flat(n: usize, rows: Vec<f64>) -> Result<Self> {
        if n == 0 || rows.len() != n * n {
            return Err(ChainError::Shape(format!("expected {n}x{n} entries, got {}", rows.len())));
        }
        for i in 0..n {
            let row = &rows[i * n..(i + 1) * n];
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                    return Err(ChainError::BadEntry { row: i, col: j, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(ChainError::NotStochastic { row: i, sum });
            }
        }
        Ok(Self { n, rows })
    }

    fn from_matrix_unchecked(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let rows = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect();
        Self { n, rows }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut rows = vec![0.0; n * n];
        for i in 0..n {
            rows[i * n + i] = 1.0;
        }
        Self::from_flat(n, rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x * self.n..(x + 1) * self.n]
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.rows[x * self.n + y]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.rows)
    }

    /// Parses one row per line of comma-separated probabilities.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| ChainError::Csv(e.to_string()))?;
            let row = record
                .iter()
                .map(|cell| {
                    cell.parse::<f64>().map_err(|_| {
                        ChainError::Csv(format!("line {}: cannot parse {cell:?} as a probability", line + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(ChainError::Csv("empty kernel file".into()));
        }
        Self::new(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let cells: Vec<String> = self.row(i).iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for FiniteKernel {
    type Error = ChainError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows)
    }
}

impl From<FiniteKernel> for Vec<Vec<f64>> {
    fn from(k: FiniteKernel) -> Self {
        k.to_rows()
    }
}

/// Probability vector over the states of a chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ChainError::Shape("empty distribution".into()));
        }
        if let Some((i, &v)) = probs.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(ChainError::BadEntry { row: 0, col: i, value: v });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ChainError::NotStochastic { row: 0, sum });
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self { probs: vec![1.0 / n as f64; n] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// One step of the chain: `μ ↦ μP`.
    pub fn step(&self, kernel: &FiniteKernel) -> Result<Vec<f64>> {
        if kernel.n() != self.len() {
            return Err(ChainError::Shape(format!("distribution has {} states, kernel {}", self.len(), kernel.n())));
        }
        let n = kernel.n();
        let mut out = vec![0.0; n];
        for (x, &mass) in self.probs.iter().enumerate() {
            for (y, o) in out.iter_mut().enumerate() {
                *o += mass * kernel.get(x, y);
            }
        }
        Ok(out)
    }
}

/// `[[1−p, p], [p, 1−p]]`.
pub fn two_state(p: f64) -> Result<FiniteKernel> {
    if !(p > 0.0 && p < 1.0) {
        return Err(ChainError::InvalidParameter(format!("flip probability {p} outside (0, 1)")));
    }
    FiniteKernel::new(vec![vec![1.0 - p, p], vec![p, 1.0 - p]])
}

/// Flip probability whose two-state chain has mixing time exactly `tau`.
///
/// Uses `d(t) = (1 − 2p)ᵗ` and places the quarter crossing half a step
/// before `tau`, so rounding cannot move it across an integer.
pub fn two_state_for_mixing_time(tau: u64) -> Result<f64> {
    if tau == 0 {
        return Err(ChainError::InvalidParameter("a two-state chain needs at least one step to mix".into()));
    }
    let contraction = 4f64.powf(-1.0 / (tau as f64 - 0.5));
    Ok((1.0 - contraction) / 2.0)
}

/// Stationary distribution from the null space of `Pᵀ − I`.
pub fn stationary(kernel: &FiniteKernel) -> Result<Distribution> {
    let n = kernel.n();
    let a = kernel.matrix().transpose() - DMatrix::<f64>::identity(n, n);
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .as_ref()
        .ok_or_else(|| ChainError::Numerical("SVD did not produce right singular vectors".into()))?;
    let nullity = svd.singular_values.iter().filter(|&&s| s < NULLSPACE_TOL).count();
    if nullity > 1 {
        return Err(ChainError::Degenerate { nullity });
    }
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let mut pi: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let sum: f64 = pi.iter().sum();
    if sum.abs() < f64::EPSILON {
        return Err(ChainError::Numerical("null vector sums to zero".into()));
    }
    for v in pi.iter_mut() {
        *v /= sum;
        // rounding noise on transient states
        if *v < 1e-14 {
            *v = 0.0;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Distribution::new(pi)
}

/// Half the L1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(ChainError::Shape(format!("lengths {} and {} differ", p.len(), q.len())));
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `Pᵗ` by repeated squaring.
pub fn matrix_power(kernel: &FiniteKernel, t: u64) -> DMatrix<f64> {
    let n = kernel.n();
    let mut result = DMatrix::<f64>::identity(n, n);
    let mut base = kernel.matrix();
    let mut e = t;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

fn worst_row_tv(power: &DMatrix<f64>, pi: &Distribution) -> f64 {
    let pi = pi.probs();
    (0..power.nrows())
        .map(|x| 0.5 * pi.iter().enumerate().map(|(y, p)| (power[(x, y)] - p).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `d(t) = 2 · max_x ‖Pᵗ(x, ·) − π‖_TV`.
pub fn worst_case_tv(kernel: &FiniteKernel, t: u64) -> Result<f64> {
    let pi = stationary(kernel)?;
    Ok(2.0 * worst_row_tv(&matrix_power(kernel, t), &pi))
}

/// Smallest `t` with `d(t) ≤ eps`, by doubling then bisection.
pub fn mixing_time(kernel: &FiniteKernel, eps: f64, cap: u64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ChainError::InvalidParameter(format!("threshold {eps} outside (0, 1)")));
    }
    let pi = stationary(kernel)?;
    let eps = eps + TV_TOL;
    let d = |t: u64| 2.0 * worst_row_tv(&matrix_power(kernel, t), &pi);
    if d(0) <= eps {
        return Ok(0);
    }
    let mut hi = 1u64;
    while d(hi) > eps {
        if hi >= cap {
            return Err(ChainError::NotMixed { cap });
        }
        hi = (hi * 2).min(cap);
    }
    // d(lo) > eps >= d(hi)
    let mut lo = hi / 2;
    if lo == 0 || d(lo) <= eps {
        lo = 0;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if d(mid) <= eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// τ at the default quarter threshold and cap.
pub fn tau(kernel: &FiniteKernel) -> Result<u64> {
    mixing_time(kernel, QUARTER, DEFAULT_MIXING_CAP)
}

/// Mixing-time bound for the product of `taus.len()` independent chains:
/// `(⌈log₄ M⌉ + 1) · max τ_m`.
pub fn product_mixing_bound(taus: &[u64]) -> Result<u64> {
    let max = *taus
        .iter()
        .max()
        .ok_or_else(|| ChainError::InvalidParameter("no per-client mixing times".into()))?;
    if taus.contains(&0) {
        return Err(ChainError::InvalidParameter("mixing times must be at least 1".into()));
    }
    Ok((ceil_log4(taus.len() as u64) + 1) * max)
}

fn ceil_log4(m: u64) -> u64 {
    let mut j = 0;
    let mut pow = 1u64;
    while pow < m {
        pow = pow.saturating_mul(4);
        j += 1;
    }
    j
}

/// Second-largest eigenvalue of `(P*)ᵏPᵏ` for each `k ∈ [1, k_max]`.
///
/// `(P*)ᵏPᵏ` is self-adjoint in `L²(π)`, so `D^{1/2} A D^{-1/2}` with
/// `D = diag(π)` is symmetric and shares its spectrum.
fn reversed_power_spectra(kernel: &FiniteKernel, pi: &Distribution, k_max: usize) -> Result<Vec<f64>> {
    let n = kernel.n();
    let p = kernel.matrix();
    let probs = pi.probs();
    let sqrt_pi: Vec<f64> = probs.iter().map(|v| v.sqrt()).collect();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut second = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        power = &power * &p;
        // (Pᵏ)*(x, y) = π(y) Pᵏ(y, x) / π(x)
        let reversed = DMatrix::from_fn(n, n, |x, y| probs[y] * power[(y, x)] / probs[x]);
        let a = &reversed * &power;
        let mut s = DMatrix::from_fn(n, n, |x, y| sqrt_pi[x] * a[(x, y)] / sqrt_pi[y]);
        s = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::try_new(s, f64::EPSILON, 10_000)
            .ok_or_else(|| ChainError::Numerical("symmetric eigensolver did not converge".into()))?;
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        second.push(vals.get(1).copied().unwrap_or(0.0));
    }
    Ok(second)
}

fn positive_stationary(kernel: &FiniteKernel) -> Result<Distribution> {
    let pi = stationary(kernel)?;
    if let Some(y) = pi.probs().iter().position(|&v| v <= 0.0) {
        return Err(ChainError::Unsupported(format!("stationary probability of state {y} is zero")));
    }
    Ok(pi)
}

/// Default search depth: `max(10, τ)`.
pub fn default_gap_depth(kernel: &FiniteKernel) -> Result<usize> {
    Ok(10.max(tau(kernel)? as usize))
}

/// Pseudo spectral gap `max_{1≤k≤k_max} γ((P*)ᵏPᵏ) / k`.
pub fn pseudo_spectral_gap(kernel: &FiniteKernel, k_max: Option<usize>) -> Result<f64> {
    let pi = positive_stationary(kernel)?;
    let k_max = match k_max {
        Some(0) => return Err(ChainError::InvalidParameter("search depth must be at least 1".into())),
        Some(k) => k,
        None => default_gap_depth(kernel)?,
    };
    let second = reversed_power_spectra(kernel, &pi, k_max)?;
    gap_from_spectra(&[second])
}

fn gap_from_spectra(per_chain: &[Vec<f64>]) -> Result<f64> {
    let k_max = per_chain[0].len();
    let mut best = 0.0f64;
    for k in 0..k_max {
        let lambda2 = per_chain.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
        let gap = (1.0 - lambda2).clamp(0.0, 1.0);
        best = best.max(gap / (k + 1) as f64);
    }
    // eigenvalues of a permutation-like chain come back as 1 − O(ulp)
    if best <= 1e-12 {
        return Err(ChainError::Unsupported("pseudo spectral gap is zero within the search depth".into()));
    }
    Ok(best.min(1.0))
}

/// `max_{x,y} P(x, y) / π(y)`, skipping pairs where both vanish.
pub fn c_infinity(kernel: &FiniteKernel) -> Result<f64> {
    let pi = stationary(kernel)?;
    c_infinity_with(kernel, &pi)
}

fn c_infinity_with(kernel: &FiniteKernel, pi: &Distribution) -> Result<f64> {
    let n = kernel.n();
    let mut best = 0.0f64;
    for x in 0..n {
        for (y, &py) in pi.probs().iter().enumerate() {
            let pxy = kernel.get(x, y);
            if py == 0.0 {
                if pxy > 0.0 {
                    return Err(ChainError::ViolatedAssumption { x, y });
                }
                continue;
            }
            best = best.max(pxy / py);
        }
    }
    Ok(best)
}

/// `C∞ ≤ 2cρ/π_min + 1` under uniform ergodicity with constants `(c, ρ)`.
pub fn c_infinity_ergodic_bound(c: f64, rho: f64, pi_min: f64) -> Result<f64> {
    if !(pi_min > 0.0 && pi_min <= 1.0) {
        return Err(ChainError::InvalidParameter(format!("pi_min {pi_min} outside (0, 1]")));
    }
    if !(c >= 0.0) || !(0.0..1.0).contains(&rho) {
        return Err(ChainError::InvalidParameter(format!("need c >= 0 and 0 <= rho < 1, got c={c}, rho={rho}")));
    }
    Ok(2.0 * c * rho / pi_min + 1.0)
}

/// Constants of a single chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub stationary: Distribution,
    pub mixing_time: u64,
    pub pseudo_spectral_gap: f64,
    pub c_infinity: f64,
}

pub fn diagnose(kernel: &FiniteKernel, k_max: Option<usize>) -> Result<ChainDiagnostics> {
    let stationary = stationary(kernel)?;
    let mixing_time = tau(kernel)?;
    let pseudo_spectral_gap = pseudo_spectral_gap(kernel, Some(k_max.unwrap_or(10.max(mixing_time as usize))))?;
    let c_infinity = c_infinity_with(kernel, &stationary)?;
    Ok(ChainDiagnostics { stationary, mixing_time, pseudo_spectral_gap, c_infinity })
}

/// How the system-level constants were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductMethod {
    /// Built the `∏ n_m`-state kernel and ran the single-chain routines on it.
    Explicit,
    /// Combined per-client spectra and ratios; exact for independent clients.
    Factorized,
}

/// Constants of the system-level chain that evolves all clients independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductConstants {
    pub c_infinity: f64,
    pub pseudo_spectral_gap: f64,
    pub mixing_bound: u64,
    pub k_max: usize,
    pub method: ProductMethod,
}

/// Kronecker product of independent client kernels, state index
/// `x = Σ_m x_m · ∏_{j>m} n_j`.
pub fn product_kernel(kernels: &[FiniteKernel]) -> Result<FiniteKernel> {
    let (first, rest) = kernels
        .split_first()
        .ok_or_else(|| ChainError::InvalidParameter("no client kernels".into()))?;
    let mut acc = first.matrix();
    for k in rest {
        acc = acc.kronecker(&k.matrix());
    }
    // Rounding in the Kronecker products can push row sums off by a few ulps.
    let mut out = FiniteKernel::from_matrix_unchecked(&acc);
    for i in 0..out.n {
        let n = out.n;
        let s: f64 = out.rows[i * n..(i + 1) * n].iter().sum();
        out.rows[i * n..(i + 1) * n].iter_mut().for_each(|v| *v /= s);
    }
    FiniteKernel::from_flat(out.n, out.rows)
}

/// System-level `C∞` and `ν_ps` for independent clients.
///
/// For a product chain `C∞ = ∏ C∞_m` and `(P*)ᵏPᵏ = ⊗ (P_m*)ᵏP_mᵏ`, whose
/// second eigenvalue is the largest per-client second eigenvalue, so
/// nothing exponential in `M` is ever formed. `k_max` defaults to
/// `max(10, product mixing bound)`.
pub fn product_chain_constants(kernels: &[FiniteKernel], k_max: Option<usize>) -> Result<ProductConstants> {
    if kernels.is_empty() {
        return Err(ChainError::InvalidParameter("no client kernels".into()));
    }
    // Identical kernels share their diagnostics.
    let mut distinct: Vec<&FiniteKernel> = Vec::new();
    let mut taus = Vec::with_capacity(kernels.len());
    let mut cached: Vec<(Distribution, u64)> = Vec::new();
    for k in kernels {
        let idx = match distinct.iter().position(|d| *d == k) {
            Some(i) => i,
            None => {
                let pi = positive_stationary(k)?;
                let t = tau(k)?;
                distinct.push(k);
                cached.push((pi, t));
                distinct.len() - 1
            }
        };
        taus.push(cached[idx].1.max(1));
    }
    let mixing_bound = product_mixing_bound(&taus)?;
    let k_max = k_max.unwrap_or(10.max(mixing_bound as usize));
    let mut c_inf_log = 0.0;
    let mut spectra = Vec::with_capacity(distinct.len());
    for (k, (pi, _)) in distinct.iter().zip(&cached) {
        spectra.push(reversed_power_spectra(k, pi, k_max)?);
    }
    for k in kernels {
        let idx = distinct.iter().position(|d| *d == k).expect("cached above");
        c_inf_log += c_infinity_with(k, &cached[idx].0)?.ln();
    }
    Ok(ProductConstants {
        c_infinity: c_inf_log.exp(),
        pseudo_spectral_gap: gap_from_spectra(&spectra)?,
        mixing_bound,
        k_max,
        method: ProductMethod::Factorized,
    })
}

/// Same constants computed on the explicit product kernel; only feasible for
/// small state spaces.
pub fn product_chain_constants_explicit(kernels: &[FiniteKernel], k_max: Option<usize>) -> Result<ProductConstants> {
    let taus = kernels.iter().map(|k| tau(k).map(|t| t.max(1))).collect::<Result<Vec<_>>>()?;
    let mixing_bound = product_mixing_bound(&taus)?;
    let k_max = k_max.unwrap_or(10.max(mixing_bound as usize));
    let product = product_kernel(kernels)?;
    Ok(ProductConstants {
        c_infinity: c_infinity(&product)?,
        pseudo_spectral_gap: pseudo_spectral_gap(&product, Some(k_max))?,
        mixing_bound,
        k_max,
        method: ProductMethod::Explicit,
    })
}

/// One client's position in its Markov data stream.
///
/// Each transition consumes exactly one 64-bit draw of the cursor's own
/// substream, so `counter` is both the number of samples taken and the
/// offset into the substream.
#[derive(Debug, Clone)]
pub struct StreamCursor {
    kernel: Arc<FiniteKernel>,
    state: usize,
    key: RngKey,
    counter: u64,
    rng: ChaCha8Rng,
}

impl StreamCursor {
    pub fn new(kernel: Arc<FiniteKernel>, state: usize, key: RngKey) -> Result<Self> {
        if state >= kernel.n() {
            return Err(ChainError::InvalidParameter(format!("start state {state} outside [0, {})", kernel.n())));
        }
        Ok(Self { kernel, state, key, counter: 0, rng: key.rng() })
    }

    /// Start state drawn from `initial` using the `init` substream.
    pub fn with_initial(kernel: Arc<FiniteKernel>, initial: &Distribution, init: RngKey, key: RngKey) -> Result<Self> {
        if initial.len() != kernel.n() {
            return Err(ChainError::Shape("initial distribution does not match kernel".into()));
        }
        let mut rng = init.rng();
        let state = inverse_cdf(initial.probs(), unit_f64(&mut rng));
        Self::new(kernel, state, key)
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn key(&self) -> RngKey {
        self.key
    }

    pub fn kernel(&self) -> &FiniteKernel {
        &self.kernel
    }

    /// Advances one transition and returns the new state.
    #[inline]
    pub fn step(&mut self) -> usize {
        let u = unit_f64(&mut self.rng);
        self.state = inverse_cdf(self.kernel.row(self.state), u);
        self.counter += 1;
        self.state
    }

    pub fn sample_stream(&mut self, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.step()).collect()
    }
}

#[inline]
fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // u landed in the rounding slack above the last partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Draws a kernel with `rng`; rows are normalized uniform vectors.
pub fn random_kernel<R: RngCore>(rng: &mut R, n: usize) -> FiniteKernel {
    let mut rows = Vec::with_capacity(n * n);
    for _ in 0..n {
        let raw: Vec<f64> = (0..n).map(|_| unit_f64(rng) + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        rows.extend(raw.iter().map(|v| v / s));
    }
    let mut k = FiniteKernel { n, rows };
    renormalize_rows(&mut k);
    k
}

/// Draws a reversible kernel as a random walk on a weighted complete graph.
pub fn random_reversible_kernel<R: RngCore>(rng: &mut R, n: usize) -> FiniteKernel {
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = unit_f64(rng) + 1e-3;
            w[i * n + j] = v;
            w[j * n + i] = v;
        }
    }
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        let s: f64 = w[i * n..(i + 1) * n].iter().sum();
        rows.extend(w[i * n..(i + 1) * n].iter().map(|v| v / s));
    }
    let mut k = FiniteKernel { n, rows };
    renormalize_rows(&mut k);
    k
}

fn renormalize_rows(k: &mut FiniteKernel) {
    let n = k.n;
    for i in 0..n {
        let row = &mut k.rows[i * n..(i + 1) * n];
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        let drift: f64 = 1.0 - row.iter().sum::<f64>();
        row[n - 1] += drift;
    }
}
