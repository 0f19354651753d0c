//! Federated optimization over Markovian client data streams.
//!
//! * [`markov`]: finite chains, stream cursors, mixing diagnostics.
//! * [`objectives`]: the non-convex regularizer, the synthetic two-state
//!   problem and the air-quality regression loss.
//! * [`algorithms`]: Minibatch SGD, Local SGD, Local SGD with momentum and
//!   SCAFFOLD over a shared round loop.
//! * [`theory`]: bound, step-size cap and complexity calculators, and a
//!   Monte-Carlo check of the minibatch gradient-error bound.
//! * [`ingest`]: the hourly air-quality preprocessing pipeline.
//! * [`experiment`]: synthetic runs and seed summaries.

pub mod algorithms;
pub mod experiment;
pub mod ingest;
pub mod markov;
pub mod objectives;
pub mod rng;
pub mod theory;
