//! Analytic multi-source test problems, their quasi-random initial designs,
//! cross-source error and brute-force ground truths.
//!
//! Source 0 is always the high-fidelity function. All problems minimize.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Direction, DomainError, MixedPoint, MultiSourceDataset, ProblemSpace};
use crate::optim::{central_gradient, minimize_bounded, LbfgsConfig};
use crate::seeds::{derive_seed, stream_rng};
use crate::sobol::{Sobol, SobolError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchmarkError {
    #[error("coordinate {index} = {value} lies outside [{lo}, {hi}]")]
    OutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("expected {expected} inputs, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("source {0} does not exist")]
    Source(usize),
    #[error("the high-fidelity source has no error relative to itself")]
    HighFidelity,
    #[error("high-fidelity responses have zero variance")]
    ZeroVariance,
    #[error(transparent)]
    Sobol(#[from] SobolError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

pub type Evaluator = fn(&[f64], usize) -> f64;

#[derive(Debug, Clone)]
pub struct BenchmarkProblem {
    pub name: &'static str,
    pub space: ProblemSpace,
    pub input_names: Vec<&'static str>,
    pub source_labels: Vec<&'static str>,
    pub costs: Vec<f64>,
    pub initial_sizes: Vec<usize>,
    /// Cross-source errors listed with the original problem definitions.
    pub reference_rrmse: Vec<Option<f64>>,
    evaluator: Evaluator,
    /// Source index passed to `evaluator` for each exposed source.
    source_map: Vec<usize>,
}

impl BenchmarkProblem {
    pub fn num_sources(&self) -> usize {
        self.costs.len()
    }

    /// Exact response of `source` at `x`; coordinates must lie in bounds.
    pub fn evaluate(&self, x: &[f64], source: usize) -> Result<f64, BenchmarkError> {
        let bounds = self.space.numeric_bounds();
        if x.len() != bounds.len() {
            return Err(BenchmarkError::Arity { expected: bounds.len(), got: x.len() });
        }
        if source >= self.num_sources() {
            return Err(BenchmarkError::Source(source));
        }
        for (index, (&value, &(lo, hi))) in x.iter().zip(bounds).enumerate() {
            if !(lo..=hi).contains(&value) {
                return Err(BenchmarkError::OutOfBounds { index, value, lo, hi });
            }
        }
        Ok(self.raw(x, source))
    }

    fn raw(&self, x: &[f64], source: usize) -> f64 {
        (self.evaluator)(x, self.source_map[source])
    }

    /// Keeps the listed sources (the first must be the high-fidelity one).
    pub fn restricted(&self, name: &'static str, kept: &[usize]) -> Self {
        assert_eq!(kept.first(), Some(&self.space.hf_index()), "the high-fidelity source must be kept first");
        Self {
            name,
            space: self.space.with_sources(kept).expect("kept sources are valid"),
            input_names: self.input_names.clone(),
            source_labels: kept.iter().map(|&s| self.source_labels[s]).collect(),
            costs: kept.iter().map(|&s| self.costs[s]).collect(),
            initial_sizes: kept.iter().map(|&s| self.initial_sizes[s]).collect(),
            reference_rrmse: kept.iter().map(|&s| self.reference_rrmse[s]).collect(),
            evaluator: self.evaluator,
            source_map: kept.iter().map(|&s| self.source_map[s]).collect(),
        }
    }

    /// Initial multi-source data with the configured per-source sizes.
    pub fn initial_data(&self, seed: u64) -> Result<MultiSourceDataset, BenchmarkError> {
        self.initial_data_with_sizes(&self.initial_sizes, seed)
    }

    pub fn initial_data_with_sizes(&self, sizes: &[usize], seed: u64) -> Result<MultiSourceDataset, BenchmarkError> {
        let mut data = MultiSourceDataset::empty(&self.space, self.costs.clone())?;
        for (source, &n) in sizes.iter().enumerate() {
            for p in sobol_design(&self.space, n, Some(derive_seed(seed, 1000 + source as u64)), source)? {
                let y = self.evaluate(&p.x, source)?;
                data.push(p, y)?;
            }
        }
        Ok(data)
    }
}

/// First `n` points of a Sobol sequence mapped into `space` for `source`.
///
/// With `seed` the sequence is scrambled; without it the base sequence is
/// used. Numeric coordinates map affinely to their bounds; categorical ones
/// take level `floor(u · l)`.
pub fn sobol_design(
    space: &ProblemSpace,
    n: usize,
    seed: Option<u64>,
    source: usize,
) -> Result<Vec<MixedPoint>, BenchmarkError> {
    space.check_source(source)?;
    let dim = space.dx() + space.dt();
    let mut sobol = match seed {
        Some(seed) => Sobol::scrambled(dim, seed)?,
        None => Sobol::new(dim)?,
    };
    let scaler = space.scaler();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = sobol.next_point()?;
        let x = scaler.from_unit(&u[..space.dx()]);
        let t = u[space.dx()..]
            .iter()
            .zip(space.categorical_levels())
            .map(|(&v, &l)| ((v * l as f64) as usize).min(l - 1))
            .collect();
        out.push(MixedPoint { x, t, s: source });
    }
    Ok(out)
}

/// Relative root-mean-squared error of `source` against the high-fidelity
/// source over `n_mc` uniform random inputs.
pub fn rrmse(problem: &BenchmarkProblem, source: usize, n_mc: usize, seed: u64) -> Result<f64, BenchmarkError> {
    let hf = problem.space.hf_index();
    if source == hf {
        return Err(BenchmarkError::HighFidelity);
    }
    if source >= problem.num_sources() {
        return Err(BenchmarkError::Source(source));
    }
    let mut rng = stream_rng(seed, 0);
    let bounds = problem.space.numeric_bounds().to_vec();
    let mut y_h = Vec::with_capacity(n_mc);
    let mut y_l = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
        y_h.push(problem.evaluate(&x, hf)?);
        y_l.push(problem.evaluate(&x, source)?);
    }
    rrmse_of(&y_h, &y_l)
}

/// `sqrt(Σ (y_l − y_h)² / (n · var(y_h)))` with the population variance.
pub fn rrmse_of(y_h: &[f64], y_l: &[f64]) -> Result<f64, BenchmarkError> {
    let n = y_h.len() as f64;
    let mean = y_h.iter().sum::<f64>() / n;
    let var = y_h.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(BenchmarkError::ZeroVariance);
    }
    let sse: f64 = y_h.iter().zip(y_l).map(|(h, l)| (l - h) * (l - h)).sum();
    Ok((sse / (n * var)).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub value: f64,
    pub location: Vec<f64>,
    pub provenance: String,
}

/// Dense Sobol scan of the high-fidelity source followed by bounded local
/// refinement from the best `refine` scan points.
pub fn brute_force_optimum(problem: &BenchmarkProblem, scan: usize, refine: usize) -> Result<GroundTruth, BenchmarkError> {
    let space = &problem.space;
    let hf = space.hf_index();
    let sign = match space.direction() {
        Direction::Minimize => 1.0,
        Direction::Maximize => -1.0,
    };
    let scaler = space.scaler();
    let dx = space.dx();
    let mut sobol = Sobol::new(dx)?;
    let mut best: Vec<(f64, Vec<f64>)> = Vec::with_capacity(refine + 1);
    let mut u = vec![0.0; dx];
    for _ in 0..scan {
        sobol.next_into(&mut u)?;
        let v = sign * problem.raw(&scaler.from_unit(&u), hf);
        if best.len() < refine || v < best.last().map_or(f64::INFINITY, |b| b.0) {
            let at = best.partition_point(|b| b.0 <= v);
            best.insert(at, (v, u.clone()));
            best.truncate(refine);
        }
    }
    let objective = |u: &[f64]| Some(sign * problem.raw(&scaler.from_unit(u), hf));
    let lbfgs = LbfgsConfig { max_iters: 500, pg_tol: 1e-10, f_rel_tol: 1e-15, ..Default::default() };
    let lower = vec![0.0; dx];
    let upper = vec![1.0; dx];
    let mut winner = best[0].clone();
    for (v0, u0) in &best {
        let f = |u: &[f64], g: &mut [f64]| {
            central_gradient(|p| objective(&clamp_unit(p)), u, g)?;
            objective(u)
        };
        if let Ok(m) = minimize_bounded(f, u0, &lower, &upper, &lbfgs) {
            if m.f < winner.0 && m.f <= *v0 {
                winner = (m.f, m.x);
            }
        }
    }
    Ok(GroundTruth {
        value: sign * winner.0,
        location: scaler.from_unit(&winner.1),
        provenance: format!("Sobol scan of {scan} points, bounded refinement from the best {refine}"),
    })
}

fn clamp_unit(u: &[f64]) -> Vec<f64> {
    u.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn double_well(x: &[f64], source: usize) -> f64 {
    let x = x[0];
    let base = 0.6 * x.powi(4) - 0.3 * x.powi(3) - 3.0 * x * x;
    match source {
        0 => base + 2.0 * x,
        _ => base - 1.2 * x,
    }
}

fn rosenbrock(x: &[f64], source: usize) -> f64 {
    let (a, b) = (x[0], x[1]);
    match source {
        0 => (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2) - 456.3,
        _ => (1.0 - a).powi(2) + 100.0,
    }
}

/// Inputs: rw, r, Tu, Hu, Tl, Hl, L, Kw.
fn borehole(x: &[f64], source: usize) -> f64 {
    let (rw, r, tu, hu, tl, hl, l, kw) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7]);
    let log_ratio = (r / rw).ln();
    // (head-difference factor, outer log, length multiplier, Tu/Tl multiplier)
    let (head, outer, length, ratio) = match source {
        0 => (hu - hl, log_ratio, 2.0, 1.0),
        1 => (hu - 0.8 * hl, log_ratio, 1.0, 1.0),
        2 => (hu - hl, log_ratio, 8.0, 0.75),
        3 => (1.09 * hu - hl, (4.0 * r / rw).ln(), 3.0, 1.0),
        _ => (1.05 * hu - hl, (2.0 * r / rw).ln(), 3.0, 1.0),
    };
    2.0 * std::f64::consts::PI * tu * head / (outer * (1.0 + length * l * tu / (log_ratio * rw * rw * kw) + ratio * tu / tl))
}

/// Inputs: sw, wfw, A, Λ (degrees), q, λ, tc, Nz, Wdg, wp.
fn wing(x: &[f64], source: usize) -> f64 {
    let (sw, wfw, a, sweep, q, taper, tc, nz, wdg, wp) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6], x[7], x[8], x[9]);
    let c = sweep.to_radians().cos();
    let exponent = match source {
        0 | 1 => 0.758,
        2 => 0.8,
        _ => 0.9,
    };
    let body = 0.36
        * sw.powf(exponent)
        * wfw.powf(0.0035)
        * (a / (c * c)).powf(0.6)
        * q.powf(0.006)
        * taper.powf(0.04)
        * (100.0 * tc / c).powf(-0.3)
        * (nz * wdg).powf(0.49);
    match source {
        0 => body + sw * wp,
        1 | 2 => body + wp,
        _ => body,
    }
}

fn problem(
    name: &'static str,
    bounds: Vec<(f64, f64)>,
    input_names: Vec<&'static str>,
    source_labels: Vec<&'static str>,
    costs: Vec<f64>,
    initial_sizes: Vec<usize>,
    reference_rrmse: Vec<Option<f64>>,
    evaluator: Evaluator,
) -> BenchmarkProblem {
    let space = ProblemSpace::new(bounds, vec![], costs.len(), 0, Direction::Minimize).expect("static bounds are valid");
    let source_map = (0..costs.len()).collect();
    BenchmarkProblem { name, space, input_names, source_labels, costs, initial_sizes, reference_rrmse, evaluator, source_map }
}

pub const NAMES: [&str; 5] = ["double-well", "rosenbrock", "borehole", "borehole3", "wing"];

/// Registry lookup by name.
pub fn benchmark(name: &str) -> Option<BenchmarkProblem> {
    Some(match name {
        "double-well" => problem(
            "double-well",
            vec![(-3.0, 3.0)],
            vec!["x"],
            vec!["HF", "LF"],
            vec![1000.0, 1.0],
            vec![5, 0],
            vec![None, Some(1.14)],
            double_well,
        ),
        "rosenbrock" => problem(
            "rosenbrock",
            vec![(-2.0, 2.0), (-2.0, 2.0)],
            vec!["x1", "x2"],
            vec!["HF", "LF"],
            vec![1000.0, 1.0],
            vec![5, 10],
            vec![None, Some(1.42)],
            rosenbrock,
        ),
        "borehole" => problem(
            "borehole",
            vec![
                (0.05, 0.15),
                (100.0, 50000.0),
                (63070.0, 115600.0),
                (990.0, 1110.0),
                (63.1, 116.0),
                (700.0, 820.0),
                (1120.0, 1680.0),
                (9855.0, 12045.0),
            ],
            vec!["rw", "r", "Tu", "Hu", "Tl", "Hl", "L", "Kw"],
            vec!["HF", "LF1", "LF2", "LF3", "LF4"],
            vec![1000.0, 100.0, 10.0, 100.0, 10.0],
            vec![5, 5, 50, 5, 50],
            vec![None, Some(4.40), Some(1.54), Some(1.30), Some(1.3)],
            borehole,
        ),
        "borehole3" => benchmark("borehole")?.restricted("borehole3", &[0, 3, 4]),
        "wing" => problem(
            "wing",
            vec![
                (150.0, 200.0),
                (220.0, 300.0),
                (6.0, 10.0),
                (-10.0, 10.0),
                (16.0, 45.0),
                (0.5, 1.0),
                (0.08, 0.18),
                (2.5, 6.0),
                (1700.0, 2500.0),
                (0.025, 0.08),
            ],
            vec!["sw", "wfw", "A", "sweep_deg", "q", "taper", "tc", "Nz", "Wdg", "wp"],
            vec!["HF", "LF1", "LF2", "LF3"],
            vec![1000.0, 100.0, 10.0, 1.0],
            vec![5, 5, 10, 50],
            vec![None, Some(0.19), Some(1.14), Some(5.75)],
            wing,
        ),
        _ => return None,
    })
}
