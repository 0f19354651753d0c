//! Bound, step-size cap and complexity calculators with explicit constants,
//! a Monte-Carlo check of the minibatch gradient-error bound, and empirical
//! surrogates for the problem constants.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::markov::{self, ChainError, FiniteKernel, ProductConstants};
use crate::objectives::{norm_sq, FederatedProblem, ObjectiveError, SampleStream, SyntheticProblem};
use crate::rng::{below, uniform, Domain, RngKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

pub type Result<T> = std::result::Result<T, TheoryError>;

/// Symbols appearing in the convergence bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    #[serde(rename = "L")]
    pub l: f64,
    pub sigma: f64,
    pub theta: f64,
    pub delta: f64,
    pub c_inf: f64,
    pub nu_ps: f64,
    pub delta0: f64,
    pub g0: f64,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub beta: f64,
    pub eps: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TheoryError::InvalidParameter(msg));
        let finite = [self.l, self.sigma, self.theta, self.delta, self.c_inf, self.nu_ps, self.delta0, self.g0, self.beta, self.eps];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("constants must be finite".into());
        }
        if !(self.l > 0.0 && self.sigma > 0.0 && self.c_inf > 0.0) {
            return bad(format!("L, sigma, C_inf must be positive (L={}, sigma={}, C_inf={})", self.l, self.sigma, self.c_inf));
        }
        if !(self.nu_ps > 0.0 && self.nu_ps <= 1.0) {
            return bad(format!("pseudo spectral gap {} outside (0, 1]", self.nu_ps));
        }
        if self.delta < 1.0 {
            return bad(format!("delta {} below 1", self.delta));
        }
        if self.theta < 0.0 || self.delta0 < 0.0 || self.g0 < 0.0 {
            return bad("theta, Delta0 and G0 must be non-negative".into());
        }
        if self.eps <= 0.0 {
            return bad(format!("target accuracy {} must be positive", self.eps));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("momentum {} outside (0, 1]", self.beta));
        }
        if self.m == 0 || self.k == 0 || self.t == 0 {
            return bad("M, K, T must be positive".into());
        }
        Ok(())
    }

    fn sigma_sq(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// `C∞σ² / (ν_ps M K)`.
    fn noise_term(&self) -> f64 {
        self.c_inf * self.sigma_sq() / (self.nu_ps * self.m as f64 * self.k as f64)
    }

    /// `C∞σ² / (ν_ps M ε²)`.
    fn noise_per_eps(&self) -> f64 {
        self.c_inf * self.sigma_sq() / (self.nu_ps * self.m as f64 * self.eps * self.eps)
    }
}

/// Relative tolerance on step-size preconditions.
const CAP_SLACK: f64 = 1e-12;

fn ceil_count(x: f64) -> Result<usize> {
    if !x.is_finite() || x > 1e18 {
        return Err(TheoryError::InvalidParameter(format!("required count {x} is not representable")));
    }
    Ok((x.ceil() as usize).max(1))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(TheoryError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Required counts; `*_raw` are the values before rounding up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub k_raw: f64,
    pub t_raw: f64,
    pub k: usize,
    pub t: usize,
    /// Step size the counts were derived for (`γ`, `η` or `γ` respectively).
    pub step: f64,
    /// Local step cap, where the algorithm has one.
    pub eta_cap: Option<f64>,
}

/// `2Δ₀/(γT) + 4C∞σ²/(ν_ps M K)`, valid for `γ ≤ 1/L`.
pub fn minibatch_bound(c: &ProblemConstants, gamma: f64) -> Result<f64> {
    c.validate()?;
    check_positive("gamma", gamma)?;
    if gamma > 1.0 / c.l {
        return Err(TheoryError::PreconditionViolated(format!("gamma {gamma} exceeds 1/L = {}", 1.0 / c.l)));
    }
    Ok(2.0 * c.delta0 / (gamma * c.t as f64) + 4.0 * c.noise_term())
}

/// `K = ⌈8C∞σ²/(ν_ps M ε²)⌉`, `T = ⌈4LΔ₀/ε²⌉` at `γ = 1/L`.
pub fn minibatch_complexity(c: &ProblemConstants) -> Result<Complexity> {
    c.validate()?;
    let k_raw = 8.0 * c.noise_per_eps();
    let t_raw = 4.0 * c.l * c.delta0 / (c.eps * c.eps);
    Ok(Complexity { k_raw, t_raw, k: ceil_count(k_raw)?, t: ceil_count(t_raw)?, step: 1.0 / c.l, eta_cap: None })
}

/// Local SGD bound in terms of `η̃ = ηK`, valid for `η̃ ≤ 1/(10Lδ²)`.
pub fn local_sgd_bound(c: &ProblemConstants, eta: f64) -> Result<f64> {
    c.validate()?;
    check_positive("eta", eta)?;
    let eta_t = eta * c.k as f64;
    let cap = 1.0 / (10.0 * c.l * c.delta * c.delta);
    // a step at the cap, times K, can land an ulp above it
    if eta_t > cap * (1.0 + CAP_SLACK) {
        return Err(TheoryError::PreconditionViolated(format!("eta*K = {eta_t} exceeds 1/(10 L delta^2) = {cap}")));
    }
    let hetero = c.theta * c.theta + c.sigma_sq();
    Ok(98.0 / 45.0 * c.delta0 / (eta_t * c.t as f64)
        + 392.0 / 45.0 * c.noise_term()
        + 40.0 / 45.0 * c.l * eta_t * hetero / (c.delta * c.delta))
}

/// Local step cap for a given `K`:
/// `min((3/8)δ²ε²/(KL(θ²+σ²)), 1/(10KLδ²))`.
pub fn local_sgd_eta_cap(c: &ProblemConstants, k: usize) -> f64 {
    let kl = k as f64 * c.l;
    let d2 = c.delta * c.delta;
    let first = 3.0 / 8.0 * d2 * c.eps * c.eps / (kl * (c.theta * c.theta + c.sigma_sq()));
    first.min(1.0 / (10.0 * kl * d2))
}

/// `K = ⌈(392/15)C∞σ²/(ν_ps M ε²)⌉`, `η` at its cap for that `K`,
/// `T = ⌈(98/15)Δ₀/(ηKε²)⌉`.
pub fn local_sgd_complexity(c: &ProblemConstants) -> Result<Complexity> {
    c.validate()?;
    let k_raw = 392.0 / 15.0 * c.noise_per_eps();
    let k = ceil_count(k_raw)?;
    let eta = local_sgd_eta_cap(c, k);
    let t_raw = 98.0 / 15.0 * c.delta0 / (eta * k as f64 * c.eps * c.eps);
    Ok(Complexity { k_raw, t_raw, k, t: ceil_count(t_raw)?, step: eta, eta_cap: Some(eta) })
}

/// `β/(√60 L)`.
pub fn momentum_gamma_cap(c: &ProblemConstants) -> f64 {
    c.beta / (60f64.sqrt() * c.l)
}

/// The five branches of the momentum local step cap, before the `1/(KL)`
/// factor. Infinite branches are reported as `f64::INFINITY`.
pub fn momentum_cap_branches(c: &ProblemConstants, gamma: f64) -> [f64; 5] {
    let b = c.beta;
    let (m, k, t) = (c.m as f64, c.k as f64, c.t as f64);
    let drift = if c.g0 == 0.0 { f64::INFINITY } else { (c.l * c.delta0 / (360.0 * b.powi(3) * t * c.g0)).sqrt() };
    let stale = if b == 1.0 { f64::INFINITY } else { 1.0 / (225.0 * (1.0 - b)) };
    [
        1.0 / (2.0 * b),
        (c.c_inf / (120.0 * c.nu_ps * m * k * b * b)).sqrt(),
        drift,
        stale,
        1.0 / (525.0 * b * gamma * c.l * t),
    ]
}

/// Local step cap of Local SGD-M, valid for `γ ≤ β/(√60 L)`.
pub fn momentum_step_caps(c: &ProblemConstants, gamma: f64) -> Result<f64> {
    c.validate()?;
    check_positive("gamma", gamma)?;
    let cap = momentum_gamma_cap(c);
    if gamma > cap {
        return Err(TheoryError::PreconditionViolated(format!("gamma {gamma} exceeds beta/(sqrt(60) L) = {cap}")));
    }
    let min = momentum_cap_branches(c, gamma).into_iter().fold(f64::INFINITY, f64::min);
    Ok(min / (c.k as f64 * c.l))
}

/// `(4/3)(2Δ₀/(γT) + (7/2)LΔ₀/(βT) + 31C∞σ²/(ν_ps MK))`.
///
/// The descent inequality carries `(1/4)·mean ‖∇F‖²` on its right-hand
/// side; moving it to the left leaves `(3/4)·mean ‖∇F‖²`, hence `4/3`.
pub fn momentum_bound(c: &ProblemConstants, gamma: f64, eta: f64) -> Result<f64> {
    let eta_cap = momentum_step_caps(c, gamma)?;
    check_positive("eta", eta)?;
    if eta > eta_cap {
        return Err(TheoryError::PreconditionViolated(format!("eta {eta} exceeds the momentum cap {eta_cap}")));
    }
    let t = c.t as f64;
    Ok(4.0 / 3.0 * (2.0 * c.delta0 / (gamma * t) + 3.5 * c.l * c.delta0 / (c.beta * t) + 31.0 * c.noise_term()))
}

/// Counts making [`momentum_bound`] at most `ε²` with `γ = β/(√60 L)`:
/// `K = ⌈(248/3)C∞σ²/(ν_ps M ε²)⌉`, `T = ⌈(4/3)(4√60 + 7)LΔ₀/(βε²)⌉`.
/// `eta_cap` is evaluated at the returned `K` and `T`.
pub fn momentum_complexity(c: &ProblemConstants) -> Result<Complexity> {
    c.validate()?;
    let k_raw = 248.0 / 3.0 * c.noise_per_eps();
    let t_raw = 4.0 / 3.0 * (4.0 * 60f64.sqrt() + 7.0) * c.l * c.delta0 / (c.beta * c.eps * c.eps);
    let k = ceil_count(k_raw)?;
    let t = ceil_count(t_raw)?;
    let gamma = momentum_gamma_cap(c);
    let at = ProblemConstants { k, t, ..c.clone() };
    let eta_cap = momentum_step_caps(&at, gamma)?;
    Ok(Complexity { k_raw, t_raw, k, t, step: gamma, eta_cap: Some(eta_cap) })
}

/// One row of the calculator table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub algorithm: String,
    /// Bound at the constants' own `K`, `T` and the listed step sizes.
    pub bound: Option<f64>,
    pub gamma: Option<f64>,
    pub eta: Option<f64>,
    pub k_required: usize,
    pub t_required: usize,
    pub eta_cap: Option<f64>,
}

/// Calculator summary for Minibatch SGD, Local SGD and Local SGD-M, each at
/// its largest admissible step sizes.
pub fn theory_table(c: &ProblemConstants) -> Result<Vec<TheoryRow>> {
    c.validate()?;
    let mb = minibatch_complexity(c)?;
    let gamma_mb = 1.0 / c.l;
    let local = local_sgd_complexity(c)?;
    let eta_local = local_sgd_eta_cap(c, c.k);
    let mom = momentum_complexity(c)?;
    let gamma_m = momentum_gamma_cap(c);
    let eta_m = momentum_step_caps(c, gamma_m)?;
    Ok(vec![
        TheoryRow {
            algorithm: "minibatch".into(),
            bound: minibatch_bound(c, gamma_mb).ok(),
            gamma: Some(gamma_mb),
            eta: None,
            k_required: mb.k,
            t_required: mb.t,
            eta_cap: None,
        },
        TheoryRow {
            algorithm: "local_sgd".into(),
            bound: local_sgd_bound(c, eta_local).ok(),
            gamma: None,
            eta: Some(eta_local),
            k_required: local.k,
            t_required: local.t,
            eta_cap: local.eta_cap,
        },
        TheoryRow {
            algorithm: "local_sgd_m".into(),
            bound: momentum_bound(c, gamma_m, eta_m).ok(),
            gamma: Some(gamma_m),
            eta: Some(eta_m),
            k_required: mom.k,
            t_required: mom.t,
            eta_cap: mom.eta_cap,
        },
    ])
}

// ---------------------------------------------------------------------------
// Monte-Carlo check of the gradient-error bound

/// How client streams start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartMode {
    Stationary,
    /// Every client starts in this state.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientErrorCheck {
    pub measured_mse: f64,
    pub bound: f64,
    pub holds: bool,
    pub sigma_sq: f64,
    pub product: ProductConstants,
    pub trials: usize,
}

/// Largest `‖∇f_m(w; x) − ∇F_m(w)‖²` over clients, states and the noise
/// range, with `∇F_m` the exact stationary mean. The deviation is affine in
/// the noise, so the endpoints suffice.
pub fn synthetic_sigma_sq(problem: &SyntheticProblem, kernels: &[FiniteKernel], w: &[f64]) -> Result<f64> {
    let mut best = 0.0f64;
    let mut g = vec![0.0; w.len()];
    for (m, k) in kernels.iter().enumerate() {
        let pi = markov::stationary(k)?;
        let mean = problem.stationary_grad(m, pi.probs(), w);
        for state in 0..k.n() {
            for noise in [problem.noise_low, problem.noise_high] {
                problem.sample_grad_into(m, state, noise, w, &mut g);
                let dev: f64 = g.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.max(dev);
            }
        }
    }
    Ok(best)
}

/// Estimates `E‖(1/MK) Σ_{m,k} ∇f_m(w; x^{(m,k)}) − ∇F(w)‖²` over fresh
/// stationary-start streams and compares it with `4C∞σ²/(ν_ps MK)` using the
/// constants of the product chain.
///
/// `M` is `kernels.len()`; the first `M` clients of `problem` are used.
/// `sigma_sq` defaults to [`synthetic_sigma_sq`].
pub fn verify_gradient_error_bound(
    kernels: &[FiniteKernel],
    problem: &SyntheticProblem,
    w: &[f64],
    k: usize,
    trials: usize,
    start: StartMode,
    sigma_sq: Option<f64>,
    key: RngKey,
) -> Result<GradientErrorCheck> {
    if let StartMode::Fixed(_) = start {
        return Err(TheoryError::Unsupported("only stationary starts are covered by the bound".into()));
    }
    let m = kernels.len();
    if m == 0 || m > problem.clients.len() {
        return Err(TheoryError::InvalidParameter(format!("need 1..={} kernels, got {m}", problem.clients.len())));
    }
    if k == 0 || trials == 0 {
        return Err(TheoryError::InvalidParameter("K and trials must be positive".into()));
    }
    if w.len() != problem.clients[0].v[0].len() {
        return Err(TheoryError::InvalidParameter("w has the wrong dimension".into()));
    }
    if let Some(bad) = kernels.iter().find(|kk| kk.n() != 2) {
        return Err(TheoryError::InvalidParameter(format!("synthetic clients need 2-state kernels, got {}", bad.n())));
    }
    let problem = problem.truncated(m);
    let sigma_sq = match sigma_sq {
        Some(s) => s,
        None => synthetic_sigma_sq(&problem, kernels, w)?,
    };
    let product = markov::product_chain_constants(kernels, None)?;
    let pis = kernels.iter().map(markov::stationary).collect::<std::result::Result<Vec<_>, _>>()?;
    let d = w.len();
    let mut target = vec![0.0; d];
    for (mm, pi) in pis.iter().enumerate() {
        for (t, g) in target.iter_mut().zip(problem.stationary_grad(mm, pi.probs(), w)) {
            *t += g;
        }
    }
    target.iter_mut().for_each(|t| *t /= m as f64);

    // The sample gradient is affine in (indicator of state, noise):
    // ∇f = 2(wᵀV_s − w_optᵀV_s)V_s − 2·noise·V_s + λ∇r(w).
    let mut base = vec![[vec![0.0; d], vec![0.0; d]]; m];
    for (mm, slot) in base.iter_mut().enumerate() {
        let c = &problem.clients[mm];
        for s in 0..2 {
            problem.sample_grad_into(mm, s, 0.0, w, &mut slot[s]);
            debug_assert_eq!(c.v[s].len(), d);
        }
    }
    let kernels: Vec<Arc<FiniteKernel>> = kernels.iter().cloned().map(Arc::new).collect();
    let total = (m * k) as f64;
    let trial = |i: usize| -> Result<f64> {
        let seed = key.child(i as u64).seed;
        let mut mean = vec![0.0; d];
        for mm in 0..m {
            let mut stream = problem.stream(mm, kernels[mm].clone(), &pis[mm], seed)?;
            let mut count = [0usize; 2];
            let mut noise = [0.0f64; 2];
            for _ in 0..k {
                let x = stream.next_sample();
                count[x.state] += 1;
                noise[x.state] += x.noise;
            }
            let v = &problem.clients[mm].v;
            for s in 0..2 {
                let cs = count[s] as f64;
                for j in 0..d {
                    mean[j] += cs * base[mm][s][j] - 2.0 * noise[s] * v[s][j];
                }
            }
        }
        Ok(mean.iter().zip(&target).map(|(a, t)| (a / total - t).powi(2)).sum())
    };
    let errors = trial_map(trials, trial)?;
    let measured_mse = errors.iter().sum::<f64>() / trials as f64;
    let bound = 4.0 * product.c_infinity * sigma_sq / (product.pseudo_spectral_gap * total);
    let holds = measured_mse <= bound * (1.0 + 3.0 / (trials as f64).sqrt());
    Ok(GradientErrorCheck { measured_mse, bound, holds, sigma_sq, product, trials })
}

#[cfg(feature = "parallel")]
fn trial_map<F: Fn(usize) -> Result<f64> + Sync + Send>(trials: usize, f: F) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    (0..trials).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn trial_map<F: Fn(usize) -> Result<f64>>(trials: usize, f: F) -> Result<Vec<f64>> {
    (0..trials).map(f).collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(TheoryError::InvalidParameter("need at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(TheoryError::InvalidParameter("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(TheoryError::InvalidParameter("all x values coincide".into()));
    }
    Ok(sxy / sxx)
}

// ---------------------------------------------------------------------------
// Empirical constants

/// Non-negative least squares for `y ≈ a + b·x` with `a, b ≥ 0`.
pub fn nnls_intercept_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let sse = |a: f64, b: f64| x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum::<f64>();
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx > 0.0 {
        let b = sxy / sxx;
        let a = my - b * mx;
        if a >= 0.0 && b >= 0.0 {
            return (a, b);
        }
    }
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope_only = (0.0, if xx > 0.0 { (xy / xx).max(0.0) } else { 0.0 });
    let intercept_only = (my.max(0.0), 0.0);
    if sse(slope_only.0, slope_only.1) <= sse(intercept_only.0, intercept_only.1) {
        slope_only
    } else {
        intercept_only
    }
}

/// Empirical `L̂`, `σ̂`, `θ̂`, `δ̂`, `Δ̂₀`, `Ĝ₀` plus product-chain `C∞`, `ν_ps`.
///
/// `σ̂²` is measured against the clients' noise-free local gradients over
/// each client's sample support. `M` is the problem's client count; `K`,
/// `T`, `β` and `ε` are set to 1 for the caller to overwrite.
pub fn estimate_constants<P: FederatedProblem>(
    problem: &P,
    kernels: &[FiniteKernel],
    w_grid: &[Vec<f64>],
    w0: &[f64],
    sample_budget: usize,
    key: RngKey,
) -> Result<ProblemConstants> {
    if w_grid.is_empty() {
        return Err(TheoryError::InvalidParameter("empty w grid".into()));
    }
    let d = problem.dim();
    if w0.len() != d || w_grid.iter().any(|w| w.len() != d) {
        return Err(TheoryError::InvalidParameter(format!("grid points must have dimension {d}")));
    }
    let m = problem.num_clients();
    let supports: Vec<Vec<P::Sample>> = (0..m).map(|c| problem.sample_support(c)).collect();

    let mut rng = key.rng();
    let mut l_hat = 0.0f64;
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    for _ in 0..sample_budget.max(1) {
        let a = &w_grid[below(&mut rng, w_grid.len() as u64) as usize];
        let b: Vec<f64> = a.iter().map(|v| v + uniform(&mut rng, -1.0, 1.0)).collect();
        let c = below(&mut rng, m as u64) as usize;
        let x = supports[c][below(&mut rng, supports[c].len() as u64) as usize];
        problem.sample_grad(c, a, &x, &mut ga);
        problem.sample_grad(c, &b, &x, &mut gb);
        let num: f64 = ga.iter().zip(&gb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let den: f64 = a.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        if den > 0.0 {
            l_hat = l_hat.max(num / den);
        }
    }

    let mut sigma_sq = 0.0f64;
    let mut dissim = Vec::with_capacity(w_grid.len());
    let mut full = Vec::with_capacity(w_grid.len());
    for w in w_grid {
        let mut mean_sq = 0.0;
        let mut global = vec![0.0; d];
        for c in 0..m {
            let gc = problem.client_grad(c, w);
            for x in &supports[c] {
                problem.sample_grad(c, w, x, &mut ga);
                let dev: f64 = ga.iter().zip(&gc).map(|(p, q)| (p - q) * (p - q)).sum();
                sigma_sq = sigma_sq.max(dev);
            }
            mean_sq += norm_sq(&gc);
            global.iter_mut().zip(&gc).for_each(|(g, v)| *g += v);
        }
        global.iter_mut().for_each(|g| *g /= m as f64);
        dissim.push(mean_sq / m as f64);
        full.push(norm_sq(&global));
    }
    let (mut theta_sq, mut delta_sq) = nnls_intercept_slope(&full, &dissim);
    if delta_sq < 1.0 {
        delta_sq = 1.0;
        let n = full.len() as f64;
        theta_sq = (dissim.iter().zip(&full).map(|(y, x)| y - x).sum::<f64>() / n).max(0.0);
    }

    let f0 = problem.full_loss(w0);
    let f_min = w_grid.iter().map(|w| problem.full_loss(w)).fold(f0, f64::min);
    let g0 = (0..m).map(|c| norm_sq(&problem.client_grad(c, w0))).sum::<f64>() / m as f64;

    let product = markov::product_chain_constants(kernels, None)?;
    Ok(ProblemConstants {
        l: l_hat,
        sigma: sigma_sq.sqrt(),
        theta: theta_sq.sqrt(),
        delta: delta_sq.sqrt(),
        c_inf: product.c_infinity,
        nu_ps: product.pseudo_spectral_gap,
        delta0: f0 - f_min,
        g0,
        m,
        k: 1,
        t: 1,
        beta: 1.0,
        eps: 1.0,
    })
}

/// Random grid of `count` points with coordinates in `[lo, hi)`.
pub fn random_grid(dim: usize, count: usize, lo: f64, hi: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = RngKey::new(seed, Domain::Grid, 0).rng();
    (0..count).map(|_| (0..dim).map(|_| uniform(&mut rng, lo, hi)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn running() -> ProblemConstants {
        ProblemConstants {
            l: 1.0,
            sigma: 1.0,
            theta: 1.0,
            delta: 2.0,
            c_inf: 1.4,
            nu_ps: 0.84,
            delta0: 1.0,
            g0: 1.0,
            m: 10,
            k: 100,
            t: 100,
            beta: 0.5,
            eps: 0.1,
        }
    }

    #[test]
    fn minibatch_bound_substitution() {
        let b = minibatch_bound(&running(), 1.0).unwrap();
        assert!((b - (0.02 + 4.0 * 1.4 / 840.0)).abs() < 1e-15);
        assert!(matches!(minibatch_bound(&running(), 1.5), Err(TheoryError::PreconditionViolated(_))));
    }

    #[test]
    fn minibatch_k_example() {
        assert_eq!(minibatch_complexity(&running()).unwrap().k, 134);
    }

    #[test]
    fn momentum_beta_one_drops_branch() {
        let mut c = running();
        c.beta = 1.0;
        let br = momentum_cap_branches(&c, 0.01);
        assert!(br[3].is_infinite());
        assert!(momentum_step_caps(&c, 0.01).unwrap().is_finite());
    }

    #[test]
    fn nnls_cases() {
        let (a, b) = nnls_intercept_slope(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
        let (a, b) = nnls_intercept_slope(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]);
        assert_eq!(b, 0.0);
        assert!((a - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fixed_start_is_unsupported() {
        let p = crate::objectives::generate_synthetic(1, 1, 0.3, 0.01).unwrap();
        let k = markov::two_state(0.3).unwrap();
        let r = verify_gradient_error_bound(&[k], &p, &[0.0; 10], 10, 1000, StartMode::Fixed(0), None, RngKey::new(1, Domain::Verify, 0));
        assert!(matches!(r, Err(TheoryError::Unsupported(_))));
    }
}
