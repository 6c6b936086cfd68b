//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! A projected L-BFGS: the two-loop recursion runs on the free variables
//! (those not pinned at a bound by the gradient), and an Armijo backtracking
//! search follows the projected path `P(x + a d)`. Infinite bounds are
//! allowed and make a coordinate unconstrained.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("objective could not be evaluated at the starting point")]
    BadStart,
    #[error("lower/upper/start dimensions disagree")]
    Dimension,
    #[error("lower bound exceeds upper bound in coordinate {0}")]
    InvertedBounds(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub pg_tol: f64,
    /// Stop when the relative decrease of one step falls below this.
    pub f_rel_tol: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { max_iters: 200, memory: 8, pg_tol: 1e-6, f_rel_tol: 1e-10, max_backtracks: 30 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` over the box `[lower, upper]`.
///
/// `f(x, grad)` returns the objective and writes its gradient, or `None` when
/// the objective is undefined at `x` (the line search then backs off).
pub fn minimize_bounded<F>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    config: &LbfgsConfig,
) -> Result<Minimum, OptimError>
where
    F: FnMut(&[f64], &mut [f64]) -> Option<f64>,
{
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(OptimError::Dimension);
    }
    if let Some(i) = (0..n).find(|&i| lower[i] > upper[i]) {
        return Err(OptimError::InvertedBounds(i));
    }
    let project = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };

    let mut x = x0.to_vec();
    project(&mut x);
    let mut g = vec![0.0; n];
    let mut evaluations = 1;
    let mut fx = match f(&x, &mut g) {
        Some(v) if v.is_finite() && g.iter().all(|v| v.is_finite()) => v,
        _ => return Err(OptimError::BadStart),
    };

    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(config.memory);
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut g_trial = vec![0.0; n];

    while iterations < config.max_iters {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0)))
            .collect();
        let pg_norm = (0..n).filter(|&i| free[i]).map(|i| g[i].abs()).fold(0.0, f64::max);
        if pg_norm <= config.pg_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = two_loop(&g, &free, &memory);
        let slope: f64 = (0..n).map(|i| d[i] * g[i]).sum();
        if !(slope < 0.0) {
            memory.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
        }
        // Scale the very first steepest-descent step to unit length.
        let mut step = if memory.is_empty() {
            let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            (1.0 / dn).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            for i in 0..n {
                trial[i] = x[i] + step * d[i];
            }
            project(&mut trial);
            evaluations += 1;
            if let Some(ft) = f(&trial, &mut g_trial) {
                if ft.is_finite() && g_trial.iter().all(|v| v.is_finite()) {
                    let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
                    if ft <= fx + 1e-4 * decrease.min(0.0) {
                        accepted = Some(ft);
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            break;
        };

        let s: Vec<f64> = (0..n).map(|i| trial[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_trial[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-12 * yy.max(f64::MIN_POSITIVE) {
            if memory.len() == config.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        let f_old = fx;
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_trial);
        fx = f_new;
        if (f_old - f_new).abs() <= config.f_rel_tol * f_old.abs().max(f_new.abs()).max(1.0) {
            converged = true;
            break;
        }
    }

    Ok(Minimum { x, f: fx, iterations, evaluations, converged })
}

fn two_loop(g: &[f64], free: &[bool], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let n = g.len();
    let dot = |a: &[f64], b: &[f64]| -> f64 { (0..n).filter(|&i| free[i]).map(|i| a[i] * b[i]).sum() };
    let mut q: Vec<f64> = (0..n).map(|i| if free[i] { g[i] } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for i in 0..n {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let yy = dot(y, y);
        let sy = dot(s, y);
        if yy > 0.0 && sy > 0.0 {
            let gamma = sy / yy;
            q.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for i in 0..n {
            if free[i] {
                q[i] += (a - b) * s[i];
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Central finite-difference gradient with a relative step.
pub fn central_gradient<F>(mut f: F, x: &[f64], grad: &mut [f64]) -> Option<()>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    Some(())
}
