//! Monte-Carlo knowledge gradient.

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::emulator::FittedEmulator;
use crate::seeds::stream_rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KgError {
    #[error("candidate grid is empty")]
    EmptyGrid,
    #[error("at least one fantasy draw is required")]
    NoDraws,
    #[error("every fantasy update failed to factorize")]
    AllDrawsFailed,
}

fn max_mean(em: &FittedEmulator, grid: &[(Vec<f64>, Vec<usize>)], extra: (&[f64], &[usize]), s: usize) -> f64 {
    grid.iter()
        .map(|(u, t)| em.predict_standardized(u, t, s).mean)
        .chain(std::iter::once(em.predict_standardized(extra.0, extra.1, s).mean))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Knowledge gradient with explicit standard-normal draws.
///
/// Each draw `z` fantasizes `y = μ(u) + σ(u) z` at `(u, t, s)`, conditions
/// the emulator on it at fixed hyperparameters and records the largest
/// posterior mean over `grid` and the query itself. The result is the mean of
/// those maxima minus the current maximum, on the standardized scale. Draws
/// whose update cannot be factorized are skipped.
pub fn alpha_kg_with_draws(
    em: &FittedEmulator,
    u: &[f64],
    t: &[usize],
    s: usize,
    grid: &[(Vec<f64>, Vec<usize>)],
    draws: &[f64],
) -> Result<f64, KgError> {
    if grid.is_empty() {
        return Err(KgError::EmptyGrid);
    }
    if draws.is_empty() {
        return Err(KgError::NoDraws);
    }
    let current = max_mean(em, grid, (u, t), s);
    let p = em.predict_standardized(u, t, s);
    let sigma = p.std_dev();
    let mut total = 0.0;
    let mut used = 0usize;
    for &z in draws {
        if let Ok(fantasy) = em.condition_on(u, t, s, p.mean + sigma * z) {
            total += max_mean(&fantasy, grid, (u, t), s);
            used += 1;
        }
    }
    if used == 0 {
        return Err(KgError::AllDrawsFailed);
    }
    Ok(total / used as f64 - current)
}

/// Knowledge gradient with `m` draws from the stream of `seed`.
pub fn alpha_kg(
    em: &FittedEmulator,
    u: &[f64],
    t: &[usize],
    s: usize,
    grid: &[(Vec<f64>, Vec<usize>)],
    m: usize,
    seed: u64,
) -> Result<f64, KgError> {
    let mut rng = stream_rng(seed, 0);
    let draws: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
    alpha_kg_with_draws(em, u, t, s, grid, &draws)
}
