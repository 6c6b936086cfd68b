//! Latent-map Gaussian-process emulator over mixed numeric, categorical and
//! source inputs.
//!
//! Numeric inputs are scaled to the unit box and responses standardized over
//! the training set; the kernel hyperparameters are fitted by minimizing the
//! profiled likelihood from several starts with a bounded quasi-Newton search
//! using analytic gradients.

mod export;
mod kernel;
mod likelihood;
mod manifold;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{EmulatorDocument, ExportError};
pub use kernel::{correlation, Hyperparameters, LatentMap};
pub use manifold::{extract_manifold, FidelityManifold};

use crate::domain::{DomainError, MixedPoint, MultiSourceDataset, ProblemSpace};
use crate::optim::{minimize_bounded, LbfgsConfig};
use kernel::{fidelity_position, latent_position, Layout};
use likelihood::{evaluate, Evaluation, Failure, Geometry};

pub const DEFAULT_JITTER_LADDER: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmulatorError {
    #[error("need at least 2 observations, got {0}")]
    TooFewPoints(usize),
    #[error("all responses are equal; the process variance is zero")]
    DegenerateResponses,
    #[error("correlation matrix is not positive definite even at the largest jitter")]
    NotPositiveDefinite,
    #[error("all {starts} likelihood starts failed")]
    AllStartsFailed { starts: usize },
    #[error("manifold needs at least 2 sources")]
    SingleSource,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmulatorConfig {
    /// Dimension of the categorical latent space.
    pub latent_dim: usize,
    /// Dimension of the fidelity latent space.
    pub fidelity_latent_dim: usize,
    /// Box for the log10 roughness parameters.
    pub omega_bounds: (f64, f64),
    /// Random starts draw latent-map entries from `[-r, r]`.
    pub latent_init_range: f64,
    pub starts: usize,
    pub jitter_ladder: Vec<f64>,
    /// Fit a log10 nugget inside `nugget_bounds` as an extra parameter.
    pub estimate_nugget: bool,
    pub nugget_bounds: (f64, f64),
    pub max_iters: usize,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            latent_dim: 2,
            fidelity_latent_dim: 2,
            omega_bounds: (-10.0, 4.0),
            latent_init_range: 3.0,
            starts: 8,
            jitter_ladder: DEFAULT_JITTER_LADDER.to_vec(),
            estimate_nugget: false,
            nugget_bounds: (-8.0, 0.0),
            max_iters: 200,
        }
    }
}

/// How a fit went, kept for run histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub starts: usize,
    pub successful_starts: usize,
    pub converged_starts: usize,
    pub evaluations: usize,
    pub jitter: f64,
    pub nll: f64,
}

/// Posterior mean and variance at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Standardized-scale prediction with gradients in unit-box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGradient {
    pub mean: f64,
    pub variance: f64,
    pub d_mean: Vec<f64>,
    pub d_variance: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FittedEmulator {
    space: ProblemSpace,
    dataset: MultiSourceDataset,
    config: EmulatorConfig,
    hyper: Hyperparameters,
    jitter: f64,
    nll: f64,
    diagnostics: FitDiagnostics,
    geom: Geometry,
    weights: Vec<f64>,
    z: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    kinv_one: DVector<f64>,
    /// `L⁻¹ 1` and its squared norm `1ᵀ K⁻¹ 1`.
    linv_one: DVector<f64>,
    one_kinv_one: f64,
}

struct StartResult {
    theta: Vec<f64>,
    nll: f64,
    converged: bool,
    evaluations: usize,
}

impl FittedEmulator {
    /// Fits from `config.starts` starts derived from `seed`.
    pub fn fit(
        space: &ProblemSpace,
        data: &MultiSourceDataset,
        config: &EmulatorConfig,
        seed: u64,
    ) -> Result<Self, EmulatorError> {
        Self::fit_from(space, data, config, seed, None, config.starts)
    }

    /// Fits from `warm` (when its shape matches) plus `random_starts` fresh
    /// starts. With no usable warm start the first start is the default one.
    pub fn fit_warm(
        space: &ProblemSpace,
        data: &MultiSourceDataset,
        config: &EmulatorConfig,
        seed: u64,
        warm: &Hyperparameters,
        random_starts: usize,
    ) -> Result<Self, EmulatorError> {
        Self::fit_from(space, data, config, seed, Some(warm), random_starts)
    }

    fn fit_from(
        space: &ProblemSpace,
        data: &MultiSourceDataset,
        config: &EmulatorConfig,
        seed: u64,
        warm: Option<&Hyperparameters>,
        random_starts: usize,
    ) -> Result<Self, EmulatorError> {
        if data.len() < 2 {
            return Err(EmulatorError::TooFewPoints(data.len()));
        }
        let first = data.responses()[0];
        if data.responses().iter().all(|&y| y == first) {
            return Err(EmulatorError::DegenerateResponses);
        }
        let layout = Layout::new(space, config.latent_dim, config.fidelity_latent_dim, config.estimate_nugget);
        let geom = Geometry::new(space, data);

        let mut starts: Vec<Vec<f64>> = Vec::new();
        let warm_theta = warm.map(|h| layout.pack(h)).filter(|t| t.len() == layout.len());
        let fresh = if warm_theta.is_some() { random_starts } else { random_starts.saturating_sub(1) };
        match warm_theta {
            Some(mut t) => {
                clamp_theta(&mut t, &layout, config);
                starts.push(t);
            }
            None => starts.push(default_start(&layout, config, seed)),
        }
        for i in 0..fresh {
            starts.push(random_start(&layout, config, seed, i as u64 + 1));
        }

        let (lower, upper) = bounds(&layout, config);
        let lbfgs = LbfgsConfig { max_iters: config.max_iters, f_rel_tol: 1e-9, pg_tol: 1e-5, ..Default::default() };
        let results: Vec<Option<StartResult>> = starts
            .par_iter()
            .map(|x0| {
                let objective = |t: &[f64], g: &mut [f64]| {
                    evaluate(&geom, &layout, t, &config.jitter_ladder, Some(g)).ok().map(|e| e.nll)
                };
                minimize_bounded(objective, x0, &lower, &upper, &lbfgs).ok().map(|m| StartResult {
                    theta: m.x,
                    nll: m.f,
                    converged: m.converged,
                    evaluations: m.evaluations,
                })
            })
            .collect();

        let evaluations = results.iter().flatten().map(|r| r.evaluations).sum();
        let successful = results.iter().flatten().count();
        let converged = results.iter().flatten().filter(|r| r.converged).count();
        // A start stopped by the iteration cap still sits at a valid point,
        // so every finished start competes on likelihood alone.
        let best = results.iter().flatten().min_by(|a, b| a.nll.total_cmp(&b.nll));
        let Some(best) = best else {
            // Every start failed at its initial point; tell degenerate data apart.
            let probe = evaluate(&geom, &layout, &starts[0], &config.jitter_ladder, None);
            return Err(match probe {
                Err(Failure::Degenerate) => EmulatorError::DegenerateResponses,
                _ => EmulatorError::AllStartsFailed { starts: starts.len() },
            });
        };
        let eval = evaluate(&geom, &layout, &best.theta, &config.jitter_ladder, None).map_err(|f| match f {
            Failure::Degenerate => EmulatorError::DegenerateResponses,
            Failure::NotPositiveDefinite => EmulatorError::NotPositiveDefinite,
        })?;
        let diagnostics = FitDiagnostics {
            starts: starts.len(),
            successful_starts: successful,
            converged_starts: converged,
            evaluations,
            jitter: eval.jitter,
            nll: eval.nll,
        };
        let hyper = layout.unpack(&best.theta, eval.beta, eval.sigma2);
        Ok(Self::assemble(space.clone(), data.clone(), config.clone(), hyper, geom, eval, diagnostics))
    }

    /// Rebuilds an emulator at fixed hyperparameters, re-profiling β̂ and σ̂².
    pub fn with_hyperparameters(
        space: &ProblemSpace,
        data: &MultiSourceDataset,
        config: &EmulatorConfig,
        hyper: &Hyperparameters,
    ) -> Result<Self, EmulatorError> {
        if data.len() < 2 {
            return Err(EmulatorError::TooFewPoints(data.len()));
        }
        let layout = Layout::new(space, config.latent_dim, config.fidelity_latent_dim, config.estimate_nugget);
        let theta = layout.pack(hyper);
        let geom = Geometry::new(space, data);
        let eval = evaluate(&geom, &layout, &theta, &config.jitter_ladder, None).map_err(|f| match f {
            Failure::Degenerate => EmulatorError::DegenerateResponses,
            Failure::NotPositiveDefinite => EmulatorError::NotPositiveDefinite,
        })?;
        let diagnostics = FitDiagnostics {
            starts: 0,
            successful_starts: 0,
            converged_starts: 0,
            evaluations: 1,
            jitter: eval.jitter,
            nll: eval.nll,
        };
        let hyper = layout.unpack(&theta, eval.beta, eval.sigma2);
        Ok(Self::assemble(space.clone(), data.clone(), config.clone(), hyper, geom, eval, diagnostics))
    }

    fn assemble(
        space: ProblemSpace,
        dataset: MultiSourceDataset,
        config: EmulatorConfig,
        hyper: Hyperparameters,
        geom: Geometry,
        eval: Evaluation,
        diagnostics: FitDiagnostics,
    ) -> Self {
        let weights = hyper.omega.iter().map(|w| 10f64.powf(*w)).collect();
        let z = dataset.points().iter().map(|p| latent_position(&p.t, &space, hyper.latent.as_ref())).collect();
        let h = dataset.points().iter().map(|p| fidelity_position(p.s, hyper.fidelity.as_ref())).collect();
        let mut linv_one = DVector::from_element(geom.n, 1.0);
        eval.chol.l_dirty().solve_lower_triangular_mut(&mut linv_one);
        let one_kinv_one = linv_one.norm_squared();
        Self {
            space,
            dataset,
            config,
            hyper,
            jitter: eval.jitter,
            nll: eval.nll,
            diagnostics,
            geom,
            weights,
            z,
            h,
            chol: eval.chol,
            alpha: eval.alpha,
            kinv_one: eval.kinv_one,
            linv_one,
            one_kinv_one,
        }
    }

    pub fn space(&self) -> &ProblemSpace {
        &self.space
    }

    pub fn dataset(&self) -> &MultiSourceDataset {
        &self.dataset
    }

    pub fn config(&self) -> &EmulatorConfig {
        &self.config
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn nll(&self) -> f64 {
        self.nll
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    /// Training-set mean and standard deviation used to standardize responses.
    pub fn standardization(&self) -> (f64, f64) {
        (self.geom.mean, self.geom.scale)
    }

    /// Lower-triangular factor of `R + δI` (plus nugget).
    pub fn factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Correlation vector between a query and every training point.
    fn cross_correlation(&self, u: &[f64], t: &[usize], s: usize) -> DVector<f64> {
        let z = latent_position(t, &self.space, self.hyper.latent.as_ref());
        let h = fidelity_position(s, self.hyper.fidelity.as_ref());
        DVector::from_fn(self.geom.n, |i, _| {
            let xi = self.geom.x(i);
            let mut d = 0.0;
            for k in 0..u.len() {
                let diff = u[k] - xi[k];
                d += self.weights[k] * diff * diff;
            }
            d += kernel::squared_distance(&z, &self.z[i]) + kernel::squared_distance(&h, &self.h[i]);
            (-d).exp()
        })
    }

    /// Mean and variance on the standardized response scale at a unit-box
    /// numeric input.
    pub fn predict_standardized(&self, u: &[f64], t: &[usize], s: usize) -> Prediction {
        let r = self.cross_correlation(u, t, s);
        let mean = self.hyper.beta_hat + r.dot(&self.alpha);
        let mut v = r;
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let g = 1.0 - self.linv_one.dot(&v);
        let variance = self.hyper.sigma2_hat * (1.0 - v.norm_squared() + g * g / self.one_kinv_one);
        Prediction { mean, variance: variance.max(0.0) }
    }

    /// As [`Self::predict_standardized`], plus derivatives with respect to the
    /// unit-box numeric coordinates.
    pub fn predict_standardized_with_gradient(&self, u: &[f64], t: &[usize], s: usize) -> PredictionGradient {
        let r = self.cross_correlation(u, t, s);
        let mean = self.hyper.beta_hat + r.dot(&self.alpha);
        let mut v = r.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut v);
        let g = 1.0 - self.linv_one.dot(&v);
        let raw = 1.0 - v.norm_squared() + g * g / self.one_kinv_one;
        let variance = self.hyper.sigma2_hat * raw;
        // a = K⁻¹ r
        let mut a = v;
        self.chol.l_dirty().tr_solve_lower_triangular_mut(&mut a);
        let dx = u.len();
        let mut d_mean = vec![0.0; dx];
        let mut d_variance = vec![0.0; dx];
        // dσ²/dr = σ̂² (−2a − 2 g/c · K⁻¹1)
        let gc = g / self.one_kinv_one;
        for i in 0..self.geom.n {
            let xi = self.geom.x(i);
            let dm = self.alpha[i] * r[i];
            let dv = -2.0 * (a[i] + gc * self.kinv_one[i]) * r[i];
            for k in 0..dx {
                let dr = -2.0 * self.weights[k] * (u[k] - xi[k]);
                d_mean[k] += dm * dr;
                d_variance[k] += dv * dr;
            }
        }
        d_variance.iter_mut().for_each(|v| *v *= self.hyper.sigma2_hat);
        if raw <= 0.0 {
            d_variance.iter_mut().for_each(|v| *v = 0.0);
        }
        PredictionGradient { mean, variance: variance.max(0.0), d_mean, d_variance }
    }

    /// Posterior mean and variance in original response units.
    pub fn predict(&self, point: &MixedPoint) -> Prediction {
        let u = self.space.scaler().to_unit(&point.x);
        let p = self.predict_standardized(&u, &point.t, point.s);
        let (mean, scale) = (self.geom.mean, self.geom.scale);
        Prediction { mean: mean + scale * p.mean, variance: scale * scale * p.variance }
    }

    /// Posterior after appending one observation at fixed hyperparameters.
    ///
    /// The kernel parameters, β̂, σ̂² and the response standardization are all
    /// kept; only the data and the factorization change. `y_standardized` is on
    /// the standardized scale of this emulator.
    pub fn condition_on(&self, u: &[f64], t: &[usize], s: usize, y_standardized: f64) -> Result<Self, EmulatorError> {
        let x = self.space.scaler().from_unit(u);
        let point = self.space.point(x, t.to_vec(), s)?;
        let mut dataset = self.dataset.clone();
        dataset.push(point.clone(), self.geom.mean + self.geom.scale * y_standardized)?;

        let mut geom = self.geom.clone();
        geom.append(u, &point, &self.space, y_standardized);
        let layout = Layout::new(
            &self.space,
            self.config.latent_dim,
            self.config.fidelity_latent_dim,
            self.config.estimate_nugget,
        );
        let theta = layout.pack(&self.hyper);
        let r = likelihood::correlation_matrix(&geom, &layout, &theta);
        let ladder: Vec<f64> = self.config.jitter_ladder.iter().copied().filter(|&d| d >= self.jitter).collect();
        let (chol, jitter) =
            likelihood::factorize(&r, self.hyper.nugget(), &ladder).ok_or(EmulatorError::NotPositiveDefinite)?;
        let ones = DVector::from_element(geom.n, 1.0);
        let y = DVector::from_column_slice(&geom.y);
        let alpha = chol.solve(&(y - &ones * self.hyper.beta_hat));
        let kinv_one = chol.solve(&ones);
        let eval = Evaluation {
            nll: f64::NAN,
            beta: self.hyper.beta_hat,
            sigma2: self.hyper.sigma2_hat,
            jitter,
            chol,
            alpha,
            kinv_one,
        };
        let mut diagnostics = self.diagnostics.clone();
        diagnostics.jitter = jitter;
        Ok(Self::assemble(
            self.space.clone(),
            dataset,
            self.config.clone(),
            self.hyper.clone(),
            geom,
            eval,
            diagnostics,
        ))
    }
}

fn start_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `ω = 0` with small random latent maps.
fn default_start(layout: &Layout, config: &EmulatorConfig, seed: u64) -> Vec<f64> {
    let mut rng = start_rng(seed, 0);
    let mut theta: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-0.1..0.1)).collect();
    theta[..layout.dx].iter_mut().for_each(|w| *w = 0.0);
    if layout.nugget {
        theta[layout.nugget_offset()] = (-6f64).clamp(config.nugget_bounds.0, config.nugget_bounds.1);
    }
    theta
}

fn random_start(layout: &Layout, config: &EmulatorConfig, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = start_rng(seed, stream);
    let (lo, hi) = config.omega_bounds;
    let r = config.latent_init_range;
    let mut theta = Vec::with_capacity(layout.len());
    for _ in 0..layout.dx {
        theta.push(rng.random_range(lo..=hi));
    }
    for _ in layout.dx..layout.nugget_offset() {
        theta.push(rng.random_range(-r..=r));
    }
    if layout.nugget {
        theta.push(rng.random_range(config.nugget_bounds.0..=config.nugget_bounds.1));
    }
    theta
}

fn bounds(layout: &Layout, config: &EmulatorConfig) -> (Vec<f64>, Vec<f64>) {
    let mut lower = vec![f64::NEG_INFINITY; layout.len()];
    let mut upper = vec![f64::INFINITY; layout.len()];
    for k in 0..layout.dx {
        lower[k] = config.omega_bounds.0;
        upper[k] = config.omega_bounds.1;
    }
    if layout.nugget {
        lower[layout.nugget_offset()] = config.nugget_bounds.0;
        upper[layout.nugget_offset()] = config.nugget_bounds.1;
    }
    (lower, upper)
}

fn clamp_theta(theta: &mut [f64], layout: &Layout, config: &EmulatorConfig) {
    let (lower, upper) = bounds(layout, config);
    for (v, (lo, hi)) in theta.iter_mut().zip(lower.iter().zip(&upper)) {
        *v = v.clamp(*lo, *hi);
    }
}
