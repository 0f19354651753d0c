//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export returns a JSON string; errors surface as JS exceptions.

use fedstream::algorithms::{Algorithm, FedConfig};
use fedstream::experiment;
use fedstream::markov;
use fedstream::objectives::SYNTH_DIM;
use fedstream::theory::{self, ProblemConstants};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_js<E: std::fmt::Display>(e: E) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Serialize)]
struct ChainReport {
    p: f64,
    stationary: Vec<f64>,
    mixing_time: u64,
    pseudo_spectral_gap: f64,
    c_infinity: f64,
    clients: usize,
    product_mixing_bound: u64,
    product_c_infinity: f64,
    /// `d(t)` for `t = 0..=horizon`.
    worst_case_tv: Vec<f64>,
}

/// Diagnostics of the two-state chain flipping with probability `p`, and of
/// `clients` independent copies.
#[wasm_bindgen]
pub fn chain_diagnostics(p: f64, clients: usize, horizon: u32) -> Result<String, JsError> {
    let chain = chain_report(p, clients, horizon).map_err(to_js)?;
    serde_json::to_string(&chain).map_err(to_js)
}

fn chain_report(p: f64, clients: usize, horizon: u32) -> Result<ChainReport, markov::ChainError> {
    let kernel = markov::two_state(p)?;
    let diag = markov::diagnose(&kernel, None)?;
    let product = markov::product_chain_constants(&vec![kernel.clone(); clients.max(1)], None)?;
    let worst_case_tv = (0..=u64::from(horizon)).map(|t| markov::worst_case_tv(&kernel, t)).collect::<Result<_, _>>()?;
    Ok(ChainReport {
        p,
        stationary: diag.stationary.probs().to_vec(),
        mixing_time: diag.mixing_time,
        pseudo_spectral_gap: diag.pseudo_spectral_gap,
        c_infinity: diag.c_infinity,
        clients: clients.max(1),
        product_mixing_bound: product.mixing_bound,
        product_c_infinity: product.c_infinity,
        worst_case_tv,
    })
}

#[derive(Serialize)]
struct Trajectory {
    algorithm: Algorithm,
    /// `‖∇F(w_t)‖` per round, empty when the run diverged.
    grad_norm: Vec<f64>,
    error: Option<String>,
}

/// All four algorithms on one synthetic instance whose client chains have
/// mixing time `tau`.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn synthetic_trajectories(
    clients: usize,
    local_steps: usize,
    rounds: usize,
    tau: u64,
    gamma: f64,
    eta: f64,
    beta: f64,
    seed: u64,
) -> Result<String, JsError> {
    let p = markov::two_state_for_mixing_time(tau).map_err(to_js)?;
    let out: Vec<Trajectory> = Algorithm::ALL
        .into_iter()
        .map(|algorithm| {
            let config =
                FedConfig { gamma, eta, beta, seed, ..FedConfig::new(algorithm, clients, local_steps, rounds, SYNTH_DIM) };
            match experiment::run_synthetic(&config, p, fedstream::objectives::DEFAULT_LAMBDA) {
                Ok(r) => Trajectory {
                    algorithm,
                    grad_norm: r.records.iter().map(|rec| rec.grad_norm_sq.sqrt()).collect(),
                    error: None,
                },
                Err(e) => Trajectory { algorithm, grad_norm: Vec::new(), error: Some(e.to_string()) },
            }
        })
        .collect();
    serde_json::to_string(&out).map_err(to_js)
}

/// Calculator table for constants given as a JSON object with the fields of
/// `ProblemConstants` (`L`, `sigma`, `theta`, `delta`, `c_inf`, `nu_ps`,
/// `delta0`, `g0`, `M`, `K`, `T`, `beta`, `eps`).
#[wasm_bindgen]
pub fn theory_bounds(constants_json: &str) -> Result<String, JsError> {
    let c: ProblemConstants = serde_json::from_str(constants_json).map_err(to_js)?;
    let rows = theory::theory_table(&c).map_err(to_js)?;
    serde_json::to_string(&rows).map_err(to_js)
}
