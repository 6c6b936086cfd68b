//! Multi-fidelity, cost-aware Bayesian optimization over mixed inputs.

pub mod acquisition;
pub mod benchmarks;
pub mod domain;
pub mod emulator;
pub mod engine;
pub mod optim;
pub mod seeds;
pub mod sobol;
pub mod table;
