//! Maximizing an acquisition over the mixed domain, per source, and the
//! cost-normalized choice between sources.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{alpha_ei, alpha_lf, alpha_pi, log_utility_with_gradient, PosteriorSummary};
use crate::domain::{MixedPoint, MultiSourceDataset, ProblemSpace};
use crate::emulator::FittedEmulator;
use crate::optim::{minimize_bounded, LbfgsConfig};
use crate::seeds::{derive_seed, stream_rng};
use crate::sobol::Sobol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Utility {
    Pi,
    Ei,
    Lf,
}

/// Response scale on which utilities with response units (EI and the
/// exploration utility) are compared across sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum UtilityScale {
    /// The emulator's training-set standardization.
    Standardized,
    /// The response's own units.
    #[default]
    Original,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// Quasi-random candidates scored before local refinement.
    pub candidates: usize,
    /// Best candidates refined by local search.
    pub starts: usize,
    /// Highest-response training inputs added to the candidates.
    pub best_seen: usize,
    pub local_iters: usize,
    pub scale: UtilityScale,
    /// Inputs closer than this (unit-cube distance, same levels) to an
    /// existing sample of the same source carry no information for a
    /// noise-free response; their utility is taken as zero.
    pub min_separation: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { candidates: 256, starts: 32, best_seen: 8, local_iters: 30, scale: UtilityScale::default(), min_separation: 1e-3 }
    }
}

/// Per-source incumbents in the emulator's response units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbents {
    pub values: Vec<f64>,
    /// Sources without samples, which borrow the high-fidelity incumbent.
    pub borrowed: Vec<usize>,
}

impl Incumbents {
    /// Best (largest) response per source. A source with no samples takes the
    /// high-fidelity best, or the overall best when that is empty too.
    pub fn from_dataset(data: &MultiSourceDataset, hf_index: usize) -> Self {
        let ds = data.num_sources();
        let mut best = vec![None::<f64>; ds];
        for (p, &y) in data.points().iter().zip(data.responses()) {
            let b = &mut best[p.s];
            *b = Some(b.map_or(y, |v| v.max(y)));
        }
        let overall = data.responses().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fallback = best[hf_index].unwrap_or(overall);
        let borrowed = (0..ds).filter(|&s| best[s].is_none()).collect();
        Self { values: best.into_iter().map(|b| b.unwrap_or(fallback)).collect(), borrowed }
    }
}

/// Best point found for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceBest {
    pub source: usize,
    /// Numeric input in the unit box.
    pub unit_x: Vec<f64>,
    pub t: Vec<usize>,
    pub raw_utility: f64,
    pub cost_normalized_utility: f64,
    /// Natural logs of the two utilities above; these decide the comparison,
    /// since the plain values underflow far from the data.
    pub log_utility: f64,
    pub log_cost_normalized_utility: f64,
}

impl SourceBest {
    pub fn new(source: usize, unit_x: Vec<f64>, t: Vec<usize>, log_utility: f64, cost: f64) -> Self {
        let log_cn = log_utility - cost.ln();
        Self {
            source,
            unit_x,
            t,
            raw_utility: log_utility.exp(),
            cost_normalized_utility: log_cn.exp(),
            log_utility,
            log_cost_normalized_utility: log_cn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionDecision {
    pub point: MixedPoint,
    pub source: usize,
    pub raw_utility: f64,
    pub cost_normalized_utility: f64,
    /// The best candidate of every source, in source order.
    pub per_source: Vec<SourceBest>,
}

/// `n` scrambled Sobol points of the unit box, each with categorical levels
/// drawn uniformly at random.
pub fn candidate_grid(space: &ProblemSpace, n: usize, seed: u64) -> Vec<(Vec<f64>, Vec<usize>)> {
    let mut rng = stream_rng(seed, 1);
    let mut sobol = Sobol::scrambled(space.dx(), derive_seed(seed, 2)).expect("dimension checked by the space");
    (0..n)
        .map(|_| {
            let u = sobol.next_point().expect("sequence long enough");
            let t = space.categorical_levels().iter().map(|&l| rng.random_range(0..l)).collect();
            (u, t)
        })
        .collect()
}

pub(crate) fn standardized_incumbent(em: &FittedEmulator, incumbent: f64) -> f64 {
    let (mean, scale) = em.standardization();
    (incumbent - mean) / scale
}

/// Factor turning a standardized utility value into one on `scale`.
pub(crate) fn scale_factor(em: &FittedEmulator, utility: Utility, scale: UtilityScale) -> f64 {
    match (utility, scale) {
        (Utility::Pi, _) | (_, UtilityScale::Standardized) => 1.0,
        _ => em.standardization().1,
    }
}

fn log_evaluate(em: &FittedEmulator, utility: Utility, u: &[f64], t: &[usize], s: usize, y_star: f64) -> f64 {
    let p = em.predict_standardized(u, t, s);
    log_utility_with_gradient(utility, p.mean, p.variance, &[], &[], y_star, &mut [])
}

fn evaluate(em: &FittedEmulator, utility: Utility, u: &[f64], t: &[usize], s: usize, y_star: f64) -> f64 {
    let p = em.predict_standardized(u, t, s);
    let summary = PosteriorSummary::new(p.mean, p.std_dev(), y_star);
    match utility {
        Utility::Pi => alpha_pi(&summary),
        Utility::Ei => alpha_ei(&summary),
        Utility::Lf => alpha_lf(&summary),
    }
}

/// Cost-normalized acquisition of source `source` at `point`: the
/// exploration utility for low-fidelity sources, probability of improvement
/// for the high-fidelity one, each divided by the source's cost.
pub fn alpha_mfca(
    em: &FittedEmulator,
    point: &MixedPoint,
    source: usize,
    costs: &[f64],
    incumbents: &Incumbents,
    scale: UtilityScale,
) -> f64 {
    let utility = if source == em.space().hf_index() { Utility::Pi } else { Utility::Lf };
    let u = em.space().scaler().to_unit(&point.x);
    let y_star = standardized_incumbent(em, incumbents.values[source]);
    evaluate(em, utility, &u, &point.t, source, y_star) * scale_factor(em, utility, scale) / costs[source]
}

/// Multi-start maximization of `utility` for source `source`. Returns the
/// unit-box input, the levels and the natural log of the standardized utility.
///
/// Candidates are a scrambled Sobol batch (categorical levels drawn at
/// random) plus the best training inputs; the top candidates seed bounded
/// local searches with analytic gradients, then each categorical coordinate
/// of the winner is swept over its levels.
pub fn maximize_utility(
    em: &FittedEmulator,
    utility: Utility,
    source: usize,
    incumbent: f64,
    config: &SearchConfig,
    seed: u64,
) -> (Vec<f64>, Vec<usize>, f64) {
    let space = em.space();
    let dx = space.dx();
    let levels = space.categorical_levels().to_vec();
    let y_star = standardized_incumbent(em, incumbent);
    let scaler = space.scaler();

    let mut candidates = candidate_grid(space, config.candidates, seed);
    let data = em.dataset();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.responses()[b].total_cmp(&data.responses()[a]).then(a.cmp(&b)));
    for &i in order.iter().take(config.best_seen) {
        let p = &data.points()[i];
        candidates.push((scaler.to_unit(&p.x), p.t.clone()));
    }

    let sampled: Vec<(Vec<f64>, &[usize])> = data
        .points()
        .iter()
        .filter(|p| p.s == source)
        .map(|p| (scaler.to_unit(&p.x), p.t.as_slice()))
        .collect();
    let sep2 = config.min_separation * config.min_separation;
    let too_close = |u: &[f64], t: &[usize]| {
        sampled.iter().any(|(v, s)| {
            *s == t && u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < sep2
        })
    };
    let value_at = |u: &[f64], t: &[usize]| {
        if too_close(u, t) {
            f64::NEG_INFINITY
        } else {
            log_evaluate(em, utility, u, t, source, y_star)
        }
    };

    let mut scored: Vec<(f64, usize)> =
        candidates.iter().enumerate().map(|(i, (u, t))| (value_at(u, t), i)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let lower = vec![0.0; dx];
    let upper = vec![1.0; dx];
    let lbfgs = LbfgsConfig { max_iters: config.local_iters, pg_tol: 1e-9, f_rel_tol: 1e-12, ..Default::default() };
    let mut best = (candidates[scored[0].1].0.clone(), candidates[scored[0].1].1.clone(), scored[0].0);
    for &(value, i) in scored.iter().take(config.starts) {
        let (u0, t) = &candidates[i];
        if dx == 0 {
            continue;
        }
        let objective = |u: &[f64], g: &mut [f64]| {
            let p = em.predict_standardized_with_gradient(u, t, source);
            let v = log_utility_with_gradient(utility, p.mean, p.variance, &p.d_mean, &p.d_variance, y_star, g);
            g.iter_mut().for_each(|x| *x = -*x);
            v.is_finite().then_some(-v)
        };
        let (u, v) = match minimize_bounded(objective, u0, &lower, &upper, &lbfgs) {
            Ok(m) if -m.f > value && !too_close(&m.x, t) => (m.x, -m.f),
            _ => (u0.clone(), value),
        };
        if v > best.2 {
            best = (u, t.clone(), v);
        }
    }

    // Coordinate sweep over categorical levels at the winning numeric input.
    let mut improved = !levels.is_empty();
    while improved {
        improved = false;
        for (k, &l) in levels.iter().enumerate() {
            for level in 0..l {
                if level == best.1[k] {
                    continue;
                }
                let mut t = best.1.clone();
                t[k] = level;
                let v = value_at(&best.0, &t);
                if v > best.2 {
                    best = (best.0.clone(), t, v);
                    improved = true;
                }
            }
        }
    }
    best
}

/// Log utilities closer than this are a tie; dividing by the cost in log
/// space rounds exact ties apart.
const LOG_TIE: f64 = 1e-12;

fn cmp_log(a: f64, b: f64) -> Ordering {
    if a == b || (a - b).abs() <= LOG_TIE {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

/// Index into `candidates` of the largest cost-normalized utility; ties go to
/// the larger raw utility, then to the lower source index.
pub fn choose_source(candidates: &[SourceBest]) -> usize {
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let b = &candidates[best];
        let better = match cmp_log(c.log_cost_normalized_utility, b.log_cost_normalized_utility) {
            Ordering::Equal => match cmp_log(c.log_utility, b.log_utility) {
                Ordering::Equal => c.source < b.source,
                o => o == Ordering::Greater,
            },
            o => o == Ordering::Greater,
        };
        if better {
            best = i;
        }
    }
    best
}

/// Next (input, source) pair: maximize each source's utility, then compare
/// the cost-normalized maxima.
pub fn propose(
    em: &FittedEmulator,
    costs: &[f64],
    incumbents: &Incumbents,
    config: &SearchConfig,
    seed: u64,
) -> AcquisitionDecision {
    let space = em.space();
    let hf = space.hf_index();
    let per_source: Vec<SourceBest> = (0..space.num_sources())
        .map(|s| {
            let utility = if s == hf { Utility::Pi } else { Utility::Lf };
            let (unit_x, t, log_value) =
                maximize_utility(em, utility, s, incumbents.values[s], config, derive_seed(seed, s as u64));
            let log_value = log_value + scale_factor(em, utility, config.scale).ln();
            SourceBest::new(s, unit_x, t, log_value, costs[s])
        })
        .collect();
    let pick = &per_source[choose_source(&per_source)];
    let point = MixedPoint { x: space.scaler().from_unit(&pick.unit_x), t: pick.t.clone(), s: pick.source };
    AcquisitionDecision {
        point,
        source: pick.source,
        raw_utility: pick.raw_utility,
        cost_normalized_utility: pick.cost_normalized_utility,
        per_source: per_source.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Direction;
    use crate::emulator::EmulatorConfig;

    fn bi_fidelity(seed: u64) -> (ProblemSpace, MultiSourceDataset) {
        let space = ProblemSpace::new(vec![(-3.0, 3.0)], vec![], 2, 0, Direction::Maximize).unwrap();
        let mut data = MultiSourceDataset::empty(&space, vec![100.0, 1.0]).unwrap();
        let hf = |x: f64| -(x - 1.0).powi(2);
        let lf = |x: f64| -(x - 1.2).powi(2) + 0.3;
        let mut rng = stream_rng(seed, 0);
        for s in 0..2 {
            for _ in 0..6 {
                let x: f64 = rng.random_range(-3.0..3.0);
                data.push(space.point(vec![x], vec![], s).unwrap(), if s == 0 { hf(x) } else { lf(x) }).unwrap();
            }
        }
        (space, data)
    }

    #[test]
    fn incumbents_borrow_for_empty_sources() {
        let space = ProblemSpace::new(vec![(0.0, 1.0)], vec![], 3, 1, Direction::Maximize).unwrap();
        let mut data = MultiSourceDataset::empty(&space, vec![1.0, 2.0, 3.0]).unwrap();
        data.push(space.point(vec![0.1], vec![], 1).unwrap(), 4.0).unwrap();
        data.push(space.point(vec![0.2], vec![], 1).unwrap(), 5.0).unwrap();
        data.push(space.point(vec![0.3], vec![], 2).unwrap(), 9.0).unwrap();
        let inc = Incumbents::from_dataset(&data, 1);
        assert_eq!(inc.values, vec![5.0, 5.0, 9.0]);
        assert_eq!(inc.borrowed, vec![0]);
    }

    #[test]
    fn tie_break_prefers_raw_then_index() {
        let mk = |source, raw: f64, cost: f64| SourceBest::new(source, vec![], vec![], raw.ln(), cost);
        assert_eq!(choose_source(&[mk(0, 1.0, 10.0), mk(1, 0.1, 1.0)]), 0);
        assert_eq!(choose_source(&[mk(0, 0.2, 2.0), mk(1, 0.1, 1.0)]), 0);
        assert_eq!(choose_source(&[mk(0, 0.1, 1.0), mk(1, 0.1, 1.0)]), 0);
        assert_eq!(choose_source(&[mk(0, 0.1, 1.0), mk(1, 0.5, 1.0)]), 1);
        // exploration utility zero everywhere: the high-fidelity source wins
        assert_eq!(choose_source(&[mk(0, 0.3, 1000.0), mk(1, 0.0, 1.0)]), 0);
        // underflowed utilities are still ranked by their logs
        let tiny = |source, log: f64, cost: f64| SourceBest::new(source, vec![], vec![], log, cost);
        let pair = [tiny(0, -900.0, 1000.0), tiny(1, -850.0, 1.0)];
        assert_eq!((pair[0].raw_utility, pair[1].raw_utility), (0.0, 0.0));
        assert_eq!(choose_source(&pair), 1);
    }

    #[test]
    fn mfca_divides_by_cost() {
        let (space, data) = bi_fidelity(1);
        let em = FittedEmulator::fit(&space, &data, &EmulatorConfig::default(), 1).unwrap();
        let inc = Incumbents::from_dataset(&data, 0);
        let p = space.point(vec![0.3], vec![], 1).unwrap();
        let a = alpha_mfca(&em, &p, 1, &[100.0, 1.0], &inc, UtilityScale::Standardized);
        let b = alpha_mfca(&em, &p, 1, &[100.0, 10.0], &inc, UtilityScale::Standardized);
        assert!((a - 10.0 * b).abs() <= 1e-12 * a);
        // in response units the exploration utility uses the raw posterior
        let raw = em.predict(&p);
        let lf = alpha_lf(&PosteriorSummary::new(raw.mean, raw.std_dev(), inc.values[1]));
        let c = alpha_mfca(&em, &p, 1, &[100.0, 1.0], &inc, UtilityScale::Original);
        assert!((c - lf).abs() <= 1e-10 * lf, "{c} vs {lf}");
        // the high-fidelity branch is probability of improvement over its cost
        let (mean, scale) = em.standardization();
        let pred = em.predict_standardized(&[(0.3 + 3.0) / 6.0], &[], 0);
        let pi = alpha_pi(&PosteriorSummary::new(pred.mean, pred.std_dev(), (inc.values[0] - mean) / scale));
        for scale in [UtilityScale::Standardized, UtilityScale::Original] {
            assert!((alpha_mfca(&em, &p.with_source(0), 0, &[100.0, 1.0], &inc, scale) - pi / 100.0).abs() < 1e-15);
        }
    }

    #[test]
    fn local_search_beats_candidate_scan() {
        let (space, data) = bi_fidelity(2);
        let em = FittedEmulator::fit(&space, &data, &EmulatorConfig::default(), 2).unwrap();
        let inc = Incumbents::from_dataset(&data, 0);
        let cfg = SearchConfig::default();
        let (u, _, log_v) = maximize_utility(&em, Utility::Lf, 1, inc.values[1], &cfg, 3);
        let v = log_v.exp();
        let y_star = standardized_incumbent(&em, inc.values[1]);
        assert!((evaluate(&em, Utility::Lf, &u, &[], 1, y_star) - v).abs() < 1e-12 * v);
        // dense grid check
        let grid_best =
            (0..=2000).map(|i| evaluate(&em, Utility::Lf, &[i as f64 / 2000.0], &[], 1, y_star)).fold(0.0, f64::max);
        assert!(v >= grid_best * (1.0 - 1e-6), "{v} vs grid {grid_best}");
    }

    #[test]
    fn propose_is_invariant_to_cost_scaling() {
        let (space, data) = bi_fidelity(4);
        let em = FittedEmulator::fit(&space, &data, &EmulatorConfig::default(), 4).unwrap();
        let inc = Incumbents::from_dataset(&data, 0);
        let cfg = SearchConfig::default();
        let a = propose(&em, &[100.0, 1.0], &inc, &cfg, 11);
        let b = propose(&em, &[700.0, 7.0], &inc, &cfg, 11);
        assert_eq!(a.source, b.source);
        assert_eq!(a.point, b.point);
        assert!((a.cost_normalized_utility - 7.0 * b.cost_normalized_utility).abs() <= 1e-12 * a.cost_normalized_utility);
    }

    #[test]
    fn categorical_levels_are_searched() {
        let space = ProblemSpace::new(vec![(0.0, 1.0)], vec![3], 1, 0, Direction::Maximize).unwrap();
        let mut data = MultiSourceDataset::empty(&space, vec![1.0]).unwrap();
        for i in 0..12 {
            let x = (i % 4) as f64 / 3.0;
            let t = i / 4;
            data.push(space.point(vec![x], vec![t], 0).unwrap(), x + 2.0 * t as f64).unwrap();
        }
        let em = FittedEmulator::fit(&space, &data, &EmulatorConfig::default(), 0).unwrap();
        let inc = Incumbents::from_dataset(&data, 0);
        let (_, t, _) = maximize_utility(&em, Utility::Ei, 0, inc.values[0], &SearchConfig::default(), 5);
        assert_eq!(t, vec![2]);
    }
}
