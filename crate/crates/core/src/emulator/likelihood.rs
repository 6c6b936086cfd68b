//! Profiled negative log-likelihood `n ln σ̂² + ln|R|` and its gradient.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::kernel::Layout;
use crate::domain::{categorical_rows, MixedPoint, MultiSourceDataset, ProblemSpace};

const LN_10: f64 = std::f64::consts::LN_10;

/// Training data in the coordinates the correlation consumes.
#[derive(Debug, Clone)]
pub(crate) struct Geometry {
    pub n: usize,
    pub dx: usize,
    /// Unit-scaled numeric inputs, row-major `n × dx`.
    pub xs: Vec<f64>,
    /// Prior rows of `A` active for each point.
    pub t_rows: Vec<Vec<usize>>,
    pub sources: Vec<usize>,
    /// Responses standardized with `mean` and `scale`.
    pub y: Vec<f64>,
    pub mean: f64,
    pub scale: f64,
    /// Squared numeric differences for every pair `i < j`, `dx` per pair.
    pub pair_sq: Vec<f64>,
}

impl Geometry {
    pub fn new(space: &ProblemSpace, data: &MultiSourceDataset) -> Self {
        let n = data.len();
        let dx = space.dx();
        let scaler = space.scaler();
        let mut xs = Vec::with_capacity(n * dx);
        for p in data.points() {
            xs.extend(scaler.to_unit(&p.x));
        }
        let t_rows = data
            .points()
            .iter()
            .map(|p| categorical_rows(&p.t, space.categorical_levels()).collect())
            .collect();
        let sources = data.points().iter().map(|p| p.s).collect();
        let ys = data.responses();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y = ys.iter().map(|v| (v - mean) / scale).collect();
        let pair_sq = pair_squares(&xs, n, dx);
        Self { n, dx, xs, t_rows, sources, y, mean, scale, pair_sq }
    }

    /// Adds one point keeping the current standardization.
    pub fn append(&mut self, u: &[f64], point: &MixedPoint, space: &ProblemSpace, y_standardized: f64) {
        self.xs.extend_from_slice(u);
        self.t_rows.push(categorical_rows(&point.t, space.categorical_levels()).collect());
        self.sources.push(point.s);
        self.y.push(y_standardized);
        self.n += 1;
        self.pair_sq = pair_squares(&self.xs, self.n, self.dx);
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dx..(i + 1) * self.dx]
    }
}

fn pair_squares(xs: &[f64], n: usize, dx: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2 * dx);
    for i in 0..n {
        for j in i + 1..n {
            for k in 0..dx {
                let d = xs[i * dx + k] - xs[j * dx + k];
                out.push(d * d);
            }
        }
    }
    out
}

/// A successful likelihood evaluation.
pub(crate) struct Evaluation {
    pub nll: f64,
    pub beta: f64,
    pub sigma2: f64,
    pub jitter: f64,
    pub chol: Cholesky<f64, Dyn>,
    /// `K⁻¹ (y − β̂)`.
    pub alpha: DVector<f64>,
    /// `K⁻¹ 1`.
    pub kinv_one: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Failure {
    NotPositiveDefinite,
    Degenerate,
}

/// Latent positions `z_i`, `h_i` for every training point under `theta`.
fn positions(geom: &Geometry, layout: &Layout, theta: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let z = if layout.has_latent() {
        let a = &theta[layout.latent_offset()..layout.fidelity_offset()];
        geom.t_rows
            .iter()
            .map(|rows| {
                let mut z = vec![0.0; layout.dz];
                for &r in rows {
                    for c in 0..layout.dz {
                        z[c] += a[r * layout.dz + c];
                    }
                }
                z
            })
            .collect()
    } else {
        vec![Vec::new(); geom.n]
    };
    let h = if layout.has_fidelity() {
        let a = &theta[layout.fidelity_offset()..layout.nugget_offset()];
        geom.sources.iter().map(|&s| a[s * layout.dh..(s + 1) * layout.dh].to_vec()).collect()
    } else {
        vec![Vec::new(); geom.n]
    };
    (z, h)
}

/// Correlation matrix `R` with unit diagonal (no jitter, no nugget).
pub(crate) fn correlation_matrix(geom: &Geometry, layout: &Layout, theta: &[f64]) -> DMatrix<f64> {
    let n = geom.n;
    let dx = geom.dx;
    let weights: Vec<f64> = theta[..dx].iter().map(|w| 10f64.powf(*w)).collect();
    let (z, h) = positions(geom, layout, theta);
    let mut r = DMatrix::identity(n, n);
    let mut p = 0;
    for i in 0..n {
        for j in i + 1..n {
            let sq = &geom.pair_sq[p * dx..(p + 1) * dx];
            let mut d: f64 = sq.iter().zip(&weights).map(|(s, w)| s * w).sum();
            d += super::kernel::squared_distance(&z[i], &z[j]);
            d += super::kernel::squared_distance(&h[i], &h[j]);
            let v = (-d).exp();
            r[(i, j)] = v;
            r[(j, i)] = v;
            p += 1;
        }
    }
    r
}

/// Factorizes `R + (δ + τ) I`, walking up the jitter ladder on failure.
///
/// A factor whose smallest squared pivot is below `δ/2` is rejected as well:
/// it passed only through rounding.
pub(crate) fn factorize(r: &DMatrix<f64>, nugget: f64, ladder: &[f64]) -> Option<(Cholesky<f64, Dyn>, f64)> {
    for &delta in ladder {
        let mut k = r.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += delta + nugget;
        }
        if let Some(chol) = k.cholesky() {
            let l = chol.l_dirty();
            let min_pivot = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot >= 0.5 * delta && min_pivot.is_finite() {
                return Some((chol, delta));
            }
        }
    }
    None
}

pub(crate) fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Evaluates the profiled likelihood at `theta`; fills `grad` when given.
pub(crate) fn evaluate(
    geom: &Geometry,
    layout: &Layout,
    theta: &[f64],
    ladder: &[f64],
    grad: Option<&mut [f64]>,
) -> Result<Evaluation, Failure> {
    let n = geom.n;
    let nugget = if layout.nugget { 10f64.powf(theta[layout.nugget_offset()]) } else { 0.0 };
    let r = correlation_matrix(geom, layout, theta);
    let (chol, jitter) = factorize(&r, nugget, ladder).ok_or(Failure::NotPositiveDefinite)?;
    let y = DVector::from_column_slice(&geom.y);
    let ones = DVector::from_element(n, 1.0);
    let kinv_one = chol.solve(&ones);
    let kinv_y = chol.solve(&y);
    let denom = ones.dot(&kinv_one);
    let beta = ones.dot(&kinv_y) / denom;
    let alpha = &kinv_y - &kinv_one * beta;
    let resid = &y - &ones * beta;
    let sigma2 = resid.dot(&alpha) / n as f64;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Failure::Degenerate);
    }
    let nll = n as f64 * sigma2.ln() + log_det(&chol);
    if !nll.is_finite() {
        return Err(Failure::NotPositiveDefinite);
    }

    if let Some(grad) = grad {
        gradient(geom, layout, theta, &r, &chol, &alpha, sigma2, nugget, grad);
    }
    Ok(Evaluation { nll, beta, sigma2, jitter, chol, alpha, kinv_one })
}

/// `dL = Σ_ij W_ij dK_ij` with `W = K⁻¹ − α αᵀ / σ̂²`; the profiled β̂ and σ̂²
/// contribute nothing extra since they are stationary points.
#[allow(clippy::too_many_arguments)]
fn gradient(
    geom: &Geometry,
    layout: &Layout,
    theta: &[f64],
    r: &DMatrix<f64>,
    chol: &Cholesky<f64, Dyn>,
    alpha: &DVector<f64>,
    sigma2: f64,
    nugget: f64,
    grad: &mut [f64],
) {
    let n = geom.n;
    let dx = geom.dx;
    let mut w = chol.inverse();
    w.ger(-1.0 / sigma2, alpha, alpha, 1.0);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (z, h) = positions(geom, layout, theta);
    let weights: Vec<f64> = theta[..dx].iter().map(|v| 10f64.powf(*v)).collect();
    let lat = layout.latent_offset();
    let fid = layout.fidelity_offset();
    let mut p = 0;
    for i in 0..n {
        for j in i + 1..n {
            // Both (i,j) and (j,i) entries, times dR/dd = −R.
            let q = -2.0 * w[(i, j)] * r[(i, j)];
            let sq = &geom.pair_sq[p * dx..(p + 1) * dx];
            for k in 0..dx {
                grad[k] += q * LN_10 * weights[k] * sq[k];
            }
            if layout.has_latent() {
                let (ri, rj) = (&geom.t_rows[i], &geom.t_rows[j]);
                for c in 0..layout.dz {
                    let diff = z[i][c] - z[j][c];
                    if diff == 0.0 {
                        continue;
                    }
                    let coef = q * 2.0 * diff;
                    for &row in ri {
                        grad[lat + row * layout.dz + c] += coef;
                    }
                    for &row in rj {
                        grad[lat + row * layout.dz + c] -= coef;
                    }
                }
            }
            if layout.has_fidelity() {
                let (si, sj) = (geom.sources[i], geom.sources[j]);
                if si != sj {
                    for c in 0..layout.dh {
                        let coef = q * 2.0 * (h[i][c] - h[j][c]);
                        grad[fid + si * layout.dh + c] += coef;
                        grad[fid + sj * layout.dh + c] -= coef;
                    }
                }
            }
            p += 1;
        }
    }
    if layout.nugget {
        grad[layout.nugget_offset()] = w.trace() * LN_10 * nugget;
    }
}
