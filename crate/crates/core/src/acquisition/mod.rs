//! Acquisition functions and the cost-aware choice of the next query.
//!
//! All closed forms follow the maximization convention: `μ` above the
//! incumbent `y*` is good. The search code feeds them the emulator's
//! standardized posterior, so utilities of different sources share one scale.

mod kg;
mod search;

use serde::{Deserialize, Serialize};
use libm::erfc;

pub use kg::{alpha_kg, alpha_kg_with_draws, KgError};
pub use search::{
    alpha_mfca, candidate_grid, choose_source, maximize_utility, propose, AcquisitionDecision, Incumbents, SearchConfig,
    UtilityScale,
    SourceBest, Utility,
};

/// Below this a positive σ is floored before dividing.
pub const SIGMA_FLOOR: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Posterior at one input plus the incumbent it is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub incumbent: f64,
}

impl PosteriorSummary {
    pub fn new(mean: f64, std_dev: f64, incumbent: f64) -> Self {
        Self { mean, std_dev: std_dev.max(0.0), incumbent }
    }

    fn z(&self) -> f64 {
        (self.mean - self.incumbent) / self.std_dev.max(SIGMA_FLOOR)
    }
}

/// Probability of improvement `Φ((μ − y*)/σ)`.
pub fn alpha_pi(p: &PosteriorSummary) -> f64 {
    if p.std_dev == 0.0 {
        return if p.mean > p.incumbent { 1.0 } else { 0.0 };
    }
    normal_cdf(p.z())
}

/// Expected improvement `(μ − y*) Φ(z) + σ φ(z)`.
pub fn alpha_ei(p: &PosteriorSummary) -> f64 {
    if p.std_dev == 0.0 {
        return (p.mean - p.incumbent).max(0.0);
    }
    let z = p.z();
    ((p.mean - p.incumbent) * normal_cdf(z) + p.std_dev * normal_pdf(z)).max(0.0)
}

/// Exploration part of expected improvement, `σ φ((y* − μ)/σ)`.
pub fn alpha_lf(p: &PosteriorSummary) -> f64 {
    if p.std_dev == 0.0 {
        return 0.0;
    }
    p.std_dev * normal_pdf(-p.z())
}

/// Value and gradient of a closed-form utility given the posterior mean and
/// variance gradients.
#[cfg(test)]
pub(crate) fn utility_with_gradient(
    utility: Utility,
    mean: f64,
    variance: f64,
    d_mean: &[f64],
    d_variance: &[f64],
    incumbent: f64,
    grad: &mut [f64],
) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let p = PosteriorSummary::new(mean, sigma, incumbent);
    if sigma == 0.0 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return match utility {
            Utility::Pi => alpha_pi(&p),
            Utility::Ei => alpha_ei(&p),
            Utility::Lf => alpha_lf(&p),
        };
    }
    let s = sigma.max(SIGMA_FLOOR);
    let z = (mean - incumbent) / s;
    let (pdf, cdf) = (normal_pdf(z), normal_cdf(z));
    for k in 0..grad.len() {
        let ds = d_variance[k] / (2.0 * s);
        let dz = (d_mean[k] - z * ds) / s;
        grad[k] = match utility {
            Utility::Pi => pdf * dz,
            Utility::Ei => cdf * d_mean[k] + pdf * ds,
            Utility::Lf => pdf * ds - s * z * pdf * dz,
        };
    }
    match utility {
        Utility::Pi => cdf,
        Utility::Ei => ((mean - incumbent) * cdf + s * pdf).max(0.0),
        Utility::Lf => s * pdf,
    }
}

/// Below this standardized gap the normal tail is taken from its asymptotic
/// series instead of `erfc`, which underflows near `z = -38`.
const TAIL_Z: f64 = -30.0;

/// `(1 - S, S)` where `Φ(z) = φ(z) S / (-z)` for `z` deep in the lower tail.
fn tail_series(z: f64) -> (f64, f64) {
    let w = 1.0 / (z * z);
    let t = w * (1.0 - w * (3.0 - w * (15.0 - w * (105.0 - w * 945.0))));
    (t, 1.0 - t)
}

fn log_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z + INV_SQRT_2PI.ln()
}

/// Natural log of a closed-form utility, with its gradient. Identical in
/// ordering to [`utility_with_gradient`] but finite far into the tails where
/// the plain value underflows to zero. Returns `-inf` for a zero utility.
pub(crate) fn log_utility_with_gradient(
    utility: Utility,
    mean: f64,
    variance: f64,
    d_mean: &[f64],
    d_variance: &[f64],
    incumbent: f64,
    grad: &mut [f64],
) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    if sigma == 0.0 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let p = PosteriorSummary::new(mean, 0.0, incumbent);
        let v = match utility {
            Utility::Pi => alpha_pi(&p),
            Utility::Ei => alpha_ei(&p),
            Utility::Lf => alpha_lf(&p),
        };
        return v.ln();
    }
    let s = sigma.max(SIGMA_FLOOR);
    let z = (mean - incumbent) / s;
    let log_pdf = log_normal_pdf(z);
    match utility {
        Utility::Pi => {
            // value and the ratio φ/Φ
            let (value, ratio) = if z < TAIL_Z {
                let (_, series) = tail_series(z);
                (log_pdf - (-z).ln() + series.ln(), -z / series)
            } else {
                let cdf = normal_cdf(z);
                (cdf.ln(), normal_pdf(z) / cdf)
            };
            for k in 0..grad.len() {
                let ds = d_variance[k] / (2.0 * s);
                grad[k] = ratio * (d_mean[k] - z * ds) / s;
            }
            value
        }
        Utility::Lf => {
            for k in 0..grad.len() {
                let ds = d_variance[k] / (2.0 * s);
                let dz = (d_mean[k] - z * ds) / s;
                grad[k] = ds / s - z * dz;
            }
            s.ln() + log_pdf
        }
        Utility::Ei => {
            // EI = s τ(z) with τ = zΦ + φ; keep Φ/τ and φ/τ for the gradient
            let (log_tau, cdf_ratio, pdf_ratio) = if z < TAIL_Z {
                let (t, series) = tail_series(z);
                (log_pdf + t.ln(), series / (-z * t), 1.0 / t)
            } else {
                let (pdf, cdf) = (normal_pdf(z), normal_cdf(z));
                let tau = z * cdf + pdf;
                if tau <= 0.0 {
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    return f64::NEG_INFINITY;
                }
                (tau.ln(), cdf / tau, pdf / tau)
            };
            for k in 0..grad.len() {
                let ds = d_variance[k] / (2.0 * s);
                grad[k] = (cdf_ratio * d_mean[k] + pdf_ratio * ds) / s;
            }
            s.ln() + log_tau
        }
    }
}
