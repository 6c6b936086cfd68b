//! Parameter layout and the mixed-input correlation function.

use serde::{Deserialize, Serialize};

use crate::domain::{categorical_rows, MixedPoint, ProblemSpace};

/// Dense row-major matrix used for the latent maps `A` and `A_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl LatentMap {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }
}

/// Kernel hyperparameters plus the profiled mean and process variance.
///
/// `omega` holds log10 roughness parameters for the unit-scaled numeric
/// inputs. `latent` maps the grouped one-hot prior of the categorical inputs
/// to `z(t)`; `fidelity` maps the one-hot source prior to `h(s)`. The
/// profiled `beta_hat` and `sigma2_hat` live on the standardized response
/// scale of the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub omega: Vec<f64>,
    pub latent: Option<LatentMap>,
    pub fidelity: Option<LatentMap>,
    pub log10_nugget: Option<f64>,
    pub beta_hat: f64,
    pub sigma2_hat: f64,
}

impl Hyperparameters {
    pub fn nugget(&self) -> f64 {
        self.log10_nugget.map_or(0.0, |v| 10f64.powf(v))
    }
}

/// Where each free hyperparameter sits in the flat optimizer vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Layout {
    pub dx: usize,
    pub total_levels: usize,
    pub dz: usize,
    pub ds: usize,
    pub dh: usize,
    pub nugget: bool,
}

impl Layout {
    pub fn new(space: &ProblemSpace, dz: usize, dh: usize, nugget: bool) -> Self {
        Self {
            dx: space.dx(),
            total_levels: space.total_levels(),
            dz: if space.dt() > 0 { dz } else { 0 },
            ds: space.num_sources(),
            dh: if space.num_sources() > 1 { dh } else { 0 },
            nugget,
        }
    }

    pub fn has_latent(&self) -> bool {
        self.total_levels > 0 && self.dz > 0
    }

    pub fn has_fidelity(&self) -> bool {
        self.ds > 1 && self.dh > 0
    }

    pub fn latent_offset(&self) -> usize {
        self.dx
    }

    pub fn fidelity_offset(&self) -> usize {
        self.dx + if self.has_latent() { self.total_levels * self.dz } else { 0 }
    }

    pub fn nugget_offset(&self) -> usize {
        self.fidelity_offset() + if self.has_fidelity() { self.ds * self.dh } else { 0 }
    }

    pub fn len(&self) -> usize {
        self.nugget_offset() + usize::from(self.nugget)
    }

    pub fn pack(&self, h: &Hyperparameters) -> Vec<f64> {
        let mut theta = h.omega.clone();
        if let Some(a) = h.latent.as_ref().filter(|_| self.has_latent()) {
            theta.extend_from_slice(&a.values);
        }
        if let Some(a) = h.fidelity.as_ref().filter(|_| self.has_fidelity()) {
            theta.extend_from_slice(&a.values);
        }
        if self.nugget {
            theta.push(h.log10_nugget.unwrap_or(-6.0));
        }
        theta
    }

    pub fn unpack(&self, theta: &[f64], beta_hat: f64, sigma2_hat: f64) -> Hyperparameters {
        let latent = self.has_latent().then(|| LatentMap {
            rows: self.total_levels,
            cols: self.dz,
            values: theta[self.latent_offset()..self.fidelity_offset()].to_vec(),
        });
        let fidelity = self.has_fidelity().then(|| LatentMap {
            rows: self.ds,
            cols: self.dh,
            values: theta[self.fidelity_offset()..self.nugget_offset()].to_vec(),
        });
        Hyperparameters {
            omega: theta[..self.dx].to_vec(),
            latent,
            fidelity,
            log10_nugget: self.nugget.then(|| theta[self.nugget_offset()]),
            beta_hat,
            sigma2_hat,
        }
    }
}

/// Per-point coordinates entering the correlation: unit-scaled numeric
/// inputs, latent categorical position `z(t)`, latent source position `h(s)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Embedded {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn latent_position(t: &[usize], space: &ProblemSpace, latent: Option<&LatentMap>) -> Vec<f64> {
    match latent {
        None => Vec::new(),
        Some(a) => {
            let mut z = vec![0.0; a.cols];
            for row in categorical_rows(t, space.categorical_levels()) {
                for (zc, ac) in z.iter_mut().zip(a.row(row)) {
                    *zc += ac;
                }
            }
            z
        }
    }
}

pub(crate) fn fidelity_position(s: usize, fidelity: Option<&LatentMap>) -> Vec<f64> {
    fidelity.map_or_else(Vec::new, |a| a.row(s).to_vec())
}

pub(crate) fn embed(point: &MixedPoint, space: &ProblemSpace, hyper: &Hyperparameters) -> Embedded {
    Embedded {
        x: space.scaler().to_unit(&point.x),
        z: latent_position(&point.t, space, hyper.latent.as_ref()),
        h: fidelity_position(point.s, hyper.fidelity.as_ref()),
    }
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Weighted distance `Σ 10^ω_k Δx_k² + ‖Δz‖² + ‖Δh‖²` between embedded points.
pub(crate) fn embedded_distance(a: &Embedded, b: &Embedded, weights: &[f64]) -> f64 {
    let dx: f64 = a.x.iter().zip(&b.x).zip(weights).map(|((u, v), w)| w * (u - v) * (u - v)).sum();
    dx + squared_distance(&a.z, &b.z) + squared_distance(&a.h, &b.h)
}

/// Correlation between two mixed points under `hyper`, in `(0, 1]`.
pub fn correlation(u: &MixedPoint, v: &MixedPoint, space: &ProblemSpace, hyper: &Hyperparameters) -> f64 {
    let weights: Vec<f64> = hyper.omega.iter().map(|w| 10f64.powf(*w)).collect();
    let a = embed(u, space, hyper);
    let b = embed(v, space, hyper);
    (-embedded_distance(&a, &b, &weights)).exp()
}
