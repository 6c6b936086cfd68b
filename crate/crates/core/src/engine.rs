//! Sequential optimization loops: one-source Bayesian optimization with a
//! closed-form or knowledge-gradient utility, and the cost-aware
//! multi-source loop with its initial screen for biased sources.
//!
//! Internally everything is maximized; minimization problems are negated on
//! the way in and reported in original units.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{
    alpha_kg_with_draws, candidate_grid, maximize_utility, propose, Incumbents, SearchConfig, Utility,
};
use crate::benchmarks::BenchmarkProblem;
use crate::domain::{Direction, DomainError, MixedPoint, MultiSourceDataset, ProblemSpace};
use crate::emulator::{extract_manifold, EmulatorConfig, EmulatorError, FidelityManifold, FittedEmulator, Hyperparameters};
use crate::seeds::{derive_seed, stream_rng};

/// Something that can be queried at a mixed input for a given source.
pub trait Objective: Sync {
    fn name(&self) -> &str;
    fn space(&self) -> &ProblemSpace;
    fn costs(&self) -> &[f64];
    fn evaluate(&self, point: &MixedPoint) -> Result<f64, String>;
}

impl Objective for BenchmarkProblem {
    fn name(&self) -> &str {
        self.name
    }

    fn space(&self) -> &ProblemSpace {
        &self.space
    }

    fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn evaluate(&self, point: &MixedPoint) -> Result<f64, String> {
        BenchmarkProblem::evaluate(self, &point.x, point.s).map_err(|e| e.to_string())
    }
}

/// Objective backed by a closure.
pub struct FnObjective<F> {
    pub name: String,
    pub space: ProblemSpace,
    pub costs: Vec<f64>,
    pub f: F,
}

impl<F: Fn(&MixedPoint) -> f64 + Sync> Objective for FnObjective<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn space(&self) -> &ProblemSpace {
        &self.space
    }

    fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn evaluate(&self, point: &MixedPoint) -> Result<f64, String> {
        Ok((self.f)(point))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AcquisitionChoice {
    #[default]
    Mfca,
    Ei,
    Pi,
    Kg,
}

impl fmt::Display for AcquisitionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mfca => "mfca",
            Self::Ei => "ei",
            Self::Pi => "pi",
            Self::Kg => "kg",
        })
    }
}

impl FromStr for AcquisitionChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mfca" => Ok(Self::Mfca),
            "ei" => Ok(Self::Ei),
            "pi" => Ok(Self::Pi),
            "kg" => Ok(Self::Kg),
            other => Err(format!("unknown acquisition `{other}` (expected mfca, ei, pi or kg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BOConfig {
    /// Total cost allowed, initial data included.
    pub budget_max: f64,
    /// Consecutive iterations without a better high-fidelity sample before stopping.
    pub stagnation_limit: usize,
    pub af: AcquisitionChoice,
    pub seed: u64,
    /// Low-fidelity sources whose implied correlation with the high-fidelity
    /// source falls below this are dropped before the loop starts.
    pub exclusion_correlation_min: f64,
    pub exclude: bool,
    /// Random starts for the screening fit, which runs once and decides
    /// which sources the whole run sees.
    pub exclusion_starts: usize,
    /// Refit hyperparameters every this many iterations; in between they are
    /// reused on the grown data.
    pub refit_every: usize,
    /// Fresh random starts added to the warm start at each refit.
    pub refit_random_starts: usize,
    pub kg_draws: usize,
    pub kg_candidates: usize,
    pub kg_grid: usize,
    /// Safety cap on the number of iterations.
    pub max_iterations: Option<usize>,
    pub emulator: EmulatorConfig,
    pub search: SearchConfig,
}

impl Default for BOConfig {
    fn default() -> Self {
        Self {
            budget_max: 40_000.0,
            stagnation_limit: 50,
            af: AcquisitionChoice::Mfca,
            seed: 0,
            exclusion_correlation_min: 0.05,
            exclude: true,
            exclusion_starts: 32,
            refit_every: 1,
            refit_random_starts: 1,
            kg_draws: 16,
            kg_candidates: 64,
            kg_grid: 64,
            max_iterations: None,
            emulator: EmulatorConfig::default(),
            search: SearchConfig::default(),
        }
    }
}

impl BOConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if !(self.budget_max > 0.0) || self.budget_max.is_nan() {
            return bad("budget_max must be positive");
        }
        if self.stagnation_limit == 0 {
            return bad("stagnation_limit must be at least 1");
        }
        if !(self.exclusion_correlation_min > 0.0 && self.exclusion_correlation_min < 1.0) {
            return bad("exclusion_correlation_min must lie in (0, 1)");
        }
        if self.refit_every == 0 {
            return bad("refit_every must be at least 1");
        }
        if self.af == AcquisitionChoice::Kg && (self.kg_draws == 0 || self.kg_candidates == 0 || self.kg_grid == 0) {
            return bad("knowledge gradient needs draws, candidates and a grid");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Precondition(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionEntry {
    pub source: usize,
    pub samples: usize,
    pub distance: Option<f64>,
    pub correlation: Option<f64>,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub threshold: f64,
    pub hf_index: usize,
    /// One entry per low-fidelity source.
    pub entries: Vec<ExclusionEntry>,
    pub manifold: Option<FidelityManifold>,
    pub warning: Option<String>,
}

impl ExclusionReport {
    pub fn excluded(&self) -> Vec<usize> {
        self.entries.iter().filter(|e| e.excluded).map(|e| e.source).collect()
    }

    /// `source_id,samples,distance_to_hf,correlation_to_hf,excluded` rows.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v}"));
        let mut out = String::from("source_id,samples,distance_to_hf,correlation_to_hf,excluded\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.source,
                e.samples,
                opt(e.distance),
                opt(e.correlation),
                e.excluded
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExclusionOutcome {
    pub kept: Vec<usize>,
    pub manifold: Option<FidelityManifold>,
    pub report: ExclusionReport,
}

/// Fits the emulator on the initial data and drops every low-fidelity source
/// whose implied correlation with the high-fidelity source is below the
/// configured threshold. Sources without samples are never judged. If the
/// fit fails, every source is kept and the report carries a warning.
pub fn step0_exclude(
    space: &ProblemSpace,
    initial: &MultiSourceDataset,
    config: &BOConfig,
) -> Result<ExclusionOutcome, EngineError> {
    let ds = space.num_sources();
    if ds < 2 {
        return Err(EngineError::Precondition("source screening needs at least two sources".into()));
    }
    let hf = space.hf_index();
    let counts = initial.counts();
    let work = initial.scaled_responses(space.direction().sign());
    let screening = EmulatorConfig { starts: config.exclusion_starts.max(1), ..config.emulator.clone() };
    let fitted = FittedEmulator::fit(space, &work, &screening, derive_seed(config.seed, STEP0_STREAM))
        .map_err(|e| e.to_string())
        .and_then(|em| extract_manifold(&em).map_err(|e| e.to_string()));
    let (manifold, warning) = match fitted {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(format!("screening fit failed, all sources kept: {e}"))),
    };
    let entries: Vec<ExclusionEntry> = (0..ds)
        .filter(|&s| s != hf)
        .map(|s| {
            let distance = manifold.as_ref().map(|m| m.distance_to_hf(s));
            let correlation = manifold.as_ref().map(|m| m.correlation_to_hf(s));
            let excluded =
                counts[s] > 0 && correlation.is_some_and(|c| c < config.exclusion_correlation_min);
            ExclusionEntry { source: s, samples: counts[s], distance, correlation, excluded }
        })
        .collect();
    let report = ExclusionReport {
        threshold: config.exclusion_correlation_min,
        hf_index: hf,
        entries,
        manifold: manifold.clone(),
        warning,
    };
    let dropped = report.excluded();
    let kept = (0..ds).filter(|s| !dropped.contains(s)).collect();
    Ok(ExclusionOutcome { kept, manifold, report })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelStatus {
    /// Hyperparameters re-optimized this iteration.
    Fitted,
    /// Previous hyperparameters reused on the grown data.
    Reused,
    /// Responses carry no information (too few or all equal); the query
    /// was placed to fill space.
    SpaceFilling,
    /// Fitting failed; the query was placed to fill space.
    FitFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub model: ModelStatus,
    pub nll: Option<f64>,
    pub jitter: Option<f64>,
    pub successful_starts: Option<usize>,
    pub utility: Option<f64>,
    pub cost_normalized_utility: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Queried input; `point.s` is the source in the problem's numbering.
    pub point: MixedPoint,
    pub response: f64,
    pub source: usize,
    pub cost: f64,
    pub cumulative_cost: f64,
    /// Best high-fidelity response so far, in original units.
    pub incumbent: Option<f64>,
    pub excluded: Vec<usize>,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryHeader {
    pub problem: String,
    pub config: BOConfig,
    /// Utility actually driving the loop (`mfca` may fall back to `pi`).
    pub mode: AcquisitionChoice,
    pub direction: Direction,
    pub costs: Vec<f64>,
    pub hf_index: usize,
    pub kept_sources: Vec<usize>,
    pub exclusion: Option<ExclusionReport>,
    pub initial_counts: Vec<usize>,
    pub initial_cost: f64,
    pub initial_incumbent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Budget,
    Stagnation,
    IterationCap,
    Aborted { reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationCheck {
    Continue,
    Budget,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub header: HistoryHeader,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(Box<HistoryHeader>),
    Iteration(Box<IterationRecord>),
    Termination { termination: Termination },
}

impl RunHistory {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn total_cost(&self) -> f64 {
        self.records.last().map_or(self.header.initial_cost, |r| r.cumulative_cost)
    }

    pub fn final_incumbent(&self) -> Option<f64> {
        self.records.last().map_or(self.header.initial_incumbent, |r| r.incumbent)
    }

    /// Cumulative cost at the moment the final incumbent was first reached.
    pub fn cost_at_best(&self) -> Option<f64> {
        let best = self.final_incumbent()?;
        if self.header.initial_incumbent == Some(best) {
            return Some(self.header.initial_cost);
        }
        self.records.iter().find(|r| r.incumbent == Some(best)).map(|r| r.cumulative_cost)
    }

    /// Queries per source after the initial data, in the problem's numbering.
    pub fn query_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.header.costs.len()];
        for r in &self.records {
            counts[r.source] += 1;
        }
        counts
    }

    pub fn is_aborted(&self) -> bool {
        matches!(self.termination, Termination::Aborted { .. })
    }

    /// Header line, one line per iteration, then the termination line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let mut push = |line: &Line| {
            out.push_str(&serde_json::to_string(line).expect("history serializes"));
            out.push('\n');
        };
        push(&Line::Header(Box::new(self.header.clone())));
        for r in &self.records {
            push(&Line::Iteration(Box::new(r.clone())));
        }
        push(&Line::Termination { termination: self.termination.clone() });
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self, String> {
        let mut header = None;
        let mut records = Vec::new();
        let mut termination = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            match serde_json::from_str::<Line>(line).map_err(|e| format!("line {}: {e}", i + 1))? {
                Line::Header(h) => header = Some(*h),
                Line::Iteration(r) => records.push(*r),
                Line::Termination { termination: t } => termination = Some(t),
            }
        }
        Ok(Self {
            header: header.ok_or("missing header record")?,
            records,
            termination: termination.ok_or("missing termination record")?,
        })
    }
}

/// Budget stop when the cheapest active source no longer fits; stagnation
/// stop after `stagnation_limit` consecutive iterations without a better
/// high-fidelity sample.
pub fn check_termination(history: &RunHistory, config: &BOConfig) -> TerminationCheck {
    let h = &history.header;
    let cheapest = h.kept_sources.iter().map(|&s| h.costs[s]).fold(f64::INFINITY, f64::min);
    if history.total_cost() + cheapest > config.budget_max {
        return TerminationCheck::Budget;
    }
    let mut best = h.initial_incumbent;
    let mut stale = 0;
    for r in &history.records {
        let improved = match (r.incumbent, best) {
            (Some(v), Some(b)) => h.direction.improves(v, b),
            (Some(_), None) => true,
            _ => false,
        };
        if improved {
            best = r.incumbent;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    if stale >= config.stagnation_limit {
        TerminationCheck::Stagnation
    } else {
        TerminationCheck::Continue
    }
}

const STEP0_STREAM: u64 = 0;

fn check_initial(objective: &dyn Objective, initial: &MultiSourceDataset) -> Result<(), EngineError> {
    let space = objective.space();
    if initial.num_sources() != space.num_sources() || objective.costs().len() != space.num_sources() {
        return Err(EngineError::Precondition("initial data, costs and space disagree on the number of sources".into()));
    }
    for p in initial.points() {
        space.check_source(p.s)?;
        space.check_levels(&p.t)?;
        if p.x.len() != space.dx() {
            return Err(EngineError::Precondition("initial point has the wrong number of inputs".into()));
        }
    }
    Ok(())
}

/// One-source loop on the high-fidelity source with EI, PI or KG. Initial
/// samples of other sources are ignored (and not charged).
pub fn run_single_fidelity<O: Objective + ?Sized>(
    objective: &O,
    initial: &MultiSourceDataset,
    config: &BOConfig,
) -> Result<RunHistory, EngineError> {
    config.validate()?;
    let objective: &dyn Objective = &Erased(objective);
    check_initial(objective, initial)?;
    let mode = match config.af {
        AcquisitionChoice::Mfca => {
            return Err(EngineError::InvalidConfig("single-fidelity runs take ei, pi or kg".into()));
        }
        other => other,
    };
    let hf = objective.space().hf_index();
    let hf_only = initial.retain_sources(&[hf])?;
    let charged = hf_only.total_cost();
    Session::new(objective, initial, charged, config, vec![hf], mode)?.run()
}

/// Cost-aware multi-source loop. With a single source left (from the start
/// or after screening) it runs the one-source loop with PI.
pub fn run_mfca<O: Objective + ?Sized>(
    objective: &O,
    initial: &MultiSourceDataset,
    config: &BOConfig,
) -> Result<RunHistory, EngineError> {
    config.validate()?;
    let objective: &dyn Objective = &Erased(objective);
    check_initial(objective, initial)?;
    let space = objective.space();
    let ds = space.num_sources();
    let (kept, exclusion) = if ds >= 2 && config.exclude {
        let outcome = step0_exclude(space, initial, config)?;
        (outcome.kept, Some(outcome.report))
    } else {
        ((0..ds).collect(), None)
    };
    let mode = if kept.len() == 1 { AcquisitionChoice::Pi } else { AcquisitionChoice::Mfca };
    let charged = initial.total_cost();
    let mut session = Session::new(objective, initial, charged, config, kept, mode)?;
    session.history.header.exclusion = exclusion;
    session.run()
}

struct Erased<'a, O: ?Sized>(&'a O);

impl<O: Objective + ?Sized> Objective for Erased<'_, O> {
    fn name(&self) -> &str {
        self.0.name()
    }
    fn space(&self) -> &ProblemSpace {
        self.0.space()
    }
    fn costs(&self) -> &[f64] {
        self.0.costs()
    }
    fn evaluate(&self, point: &MixedPoint) -> Result<f64, String> {
        self.0.evaluate(point)
    }
}

enum Model {
    Ready(Box<FittedEmulator>, ModelStatus),
    Uninformative,
    Failed(String),
}

struct Decision {
    unit_x: Vec<f64>,
    t: Vec<usize>,
    source: usize,
    utility: Option<f64>,
    cost_normalized_utility: Option<f64>,
}

struct Session<'a> {
    objective: &'a dyn Objective,
    config: &'a BOConfig,
    mode: AcquisitionChoice,
    /// Active sources in the problem's numbering; position = working index.
    kept: Vec<usize>,
    space: ProblemSpace,
    costs: Vec<f64>,
    sign: f64,
    /// Active data in the maximization convention and working numbering.
    work: MultiSourceDataset,
    hyper: Option<Hyperparameters>,
    history: RunHistory,
}

impl<'a> Session<'a> {
    fn new(
        objective: &'a dyn Objective,
        initial: &MultiSourceDataset,
        charged: f64,
        config: &'a BOConfig,
        kept: Vec<usize>,
        mode: AcquisitionChoice,
    ) -> Result<Self, EngineError> {
        let full = objective.space();
        let hf = full.hf_index();
        let space = full.with_sources(&kept)?;
        let sign = full.direction().sign();
        let work = initial.retain_sources(&kept)?.scaled_responses(sign);
        let costs: Vec<f64> = kept.iter().map(|&s| objective.costs()[s]).collect();
        let header = HistoryHeader {
            problem: objective.name().to_string(),
            config: config.clone(),
            mode,
            direction: full.direction(),
            costs: objective.costs().to_vec(),
            hf_index: hf,
            kept_sources: kept.clone(),
            exclusion: None,
            initial_counts: initial.counts(),
            initial_cost: charged,
            initial_incumbent: initial.best_of_source(hf, full.direction()),
        };
        Ok(Self {
            objective,
            config,
            mode,
            kept,
            space,
            costs,
            sign,
            work,
            hyper: None,
            history: RunHistory { header, records: Vec::new(), termination: Termination::IterationCap },
        })
    }

    fn run(mut self) -> Result<RunHistory, EngineError> {
        let mut consecutive_failures = 0;
        let excluded: Vec<usize> =
            (0..self.history.header.costs.len()).filter(|s| !self.kept.contains(s)).collect();
        let termination = loop {
            match check_termination(&self.history, self.config) {
                TerminationCheck::Budget => break Termination::Budget,
                TerminationCheck::Stagnation => break Termination::Stagnation,
                TerminationCheck::Continue => {}
            }
            let k = self.history.records.len() + 1;
            if self.config.max_iterations.is_some_and(|cap| k > cap) {
                break Termination::IterationCap;
            }
            let search_seed = derive_seed(self.config.seed, 2 * k as u64 + 2);
            let (decision, mut diagnostics) = match self.model(k) {
                Model::Ready(em, status) => {
                    consecutive_failures = 0;
                    let diagnostics = StepDiagnostics {
                        model: status,
                        nll: Some(em.nll()),
                        jitter: Some(em.jitter()),
                        successful_starts: Some(em.diagnostics().successful_starts),
                        utility: None,
                        cost_normalized_utility: None,
                        error: None,
                    };
                    self.hyper = Some(em.hyperparameters().clone());
                    (self.decide(&em, search_seed), diagnostics)
                }
                Model::Uninformative => (self.space_filling(search_seed), StepDiagnostics::bare(ModelStatus::SpaceFilling)),
                Model::Failed(error) => {
                    consecutive_failures += 1;
                    if consecutive_failures >= 2 {
                        break Termination::Aborted { reason: format!("emulator fit failed twice in a row: {error}") };
                    }
                    let mut d = StepDiagnostics::bare(ModelStatus::FitFailed);
                    d.error = Some(error);
                    (self.space_filling(search_seed), d)
                }
            };
            diagnostics.utility = decision.utility;
            diagnostics.cost_normalized_utility = decision.cost_normalized_utility;

            let cost = self.costs[decision.source];
            let cumulative_cost = self.history.total_cost() + cost;
            if cumulative_cost > self.config.budget_max {
                break Termination::Budget;
            }
            let source = self.kept[decision.source];
            let point = MixedPoint { x: self.space.scaler().from_unit(&decision.unit_x), t: decision.t, s: source };
            let response = match self.objective.evaluate(&point) {
                Ok(y) if y.is_finite() => y,
                Ok(y) => break Termination::Aborted { reason: format!("objective returned {y}") },
                Err(e) => break Termination::Aborted { reason: format!("objective failed: {e}") },
            };
            self.work.push(point.with_source(decision.source), self.sign * response)?;
            let previous = self.history.final_incumbent();
            let hf = self.history.header.hf_index;
            let incumbent = match previous {
                Some(b) if source != hf || !self.history.header.direction.improves(response, b) => Some(b),
                None if source != hf => None,
                _ => Some(response),
            };
            self.history.records.push(IterationRecord {
                iteration: k,
                point,
                response,
                source,
                cost,
                cumulative_cost,
                incumbent,
                excluded: excluded.clone(),
                diagnostics,
            });
        };
        self.history.termination = termination;
        Ok(self.history)
    }

    fn model(&self, k: usize) -> Model {
        let fit_seed = derive_seed(self.config.seed, 2 * k as u64 + 1);
        let cfg = &self.config.emulator;
        let result = match &self.hyper {
            Some(h) if (k - 1) % self.config.refit_every != 0 => {
                FittedEmulator::with_hyperparameters(&self.space, &self.work, cfg, h).map(|e| (e, ModelStatus::Reused))
            }
            Some(h) => FittedEmulator::fit_warm(&self.space, &self.work, cfg, fit_seed, h, self.config.refit_random_starts)
                .map(|e| (e, ModelStatus::Fitted)),
            None => FittedEmulator::fit(&self.space, &self.work, cfg, fit_seed).map(|e| (e, ModelStatus::Fitted)),
        };
        match result {
            Ok((em, status)) => Model::Ready(Box::new(em), status),
            Err(EmulatorError::TooFewPoints(_) | EmulatorError::DegenerateResponses) => Model::Uninformative,
            Err(e) => Model::Failed(e.to_string()),
        }
    }

    fn decide(&self, em: &FittedEmulator, seed: u64) -> Decision {
        let hf = self.space.hf_index();
        let incumbents = Incumbents::from_dataset(&self.work, hf);
        let search = &self.config.search;
        let single = |utility| {
            let (unit_x, t, log_value) = maximize_utility(em, utility, hf, incumbents.values[hf], search, seed);
            let value = log_value.exp();
            Decision {
                unit_x,
                t,
                source: hf,
                utility: Some(value),
                cost_normalized_utility: Some(value / self.costs[hf]),
            }
        };
        match self.mode {
            AcquisitionChoice::Ei => single(Utility::Ei),
            AcquisitionChoice::Pi => single(Utility::Pi),
            AcquisitionChoice::Kg => self.maximize_kg(em, seed).unwrap_or_else(|| self.space_filling(seed)),
            AcquisitionChoice::Mfca => {
                let d = propose(em, &self.costs, &incumbents, search, seed);
                let pick = &d.per_source[d.source];
                Decision {
                    unit_x: pick.unit_x.clone(),
                    t: pick.t.clone(),
                    source: d.source,
                    utility: Some(d.raw_utility),
                    cost_normalized_utility: Some(d.cost_normalized_utility),
                }
            }
        }
    }

    /// Best knowledge gradient over a quasi-random candidate set, with
    /// common draws and a shared inner grid.
    fn maximize_kg(&self, em: &FittedEmulator, seed: u64) -> Option<Decision> {
        let hf = self.space.hf_index();
        let grid = candidate_grid(&self.space, self.config.kg_grid, derive_seed(seed, 1));
        let candidates = candidate_grid(&self.space, self.config.kg_candidates, derive_seed(seed, 2));
        let mut rng = stream_rng(seed, 3);
        let draws: Vec<f64> =
            (0..self.config.kg_draws).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let mut best: Option<(f64, usize)> = None;
        for (i, (u, t)) in candidates.iter().enumerate() {
            if let Ok(v) = alpha_kg_with_draws(em, u, t, hf, &grid, &draws) {
                if best.is_none_or(|b| v > b.0) {
                    best = Some((v, i));
                }
            }
        }
        let (value, i) = best?;
        Some(Decision {
            unit_x: candidates[i].0.clone(),
            t: candidates[i].1.clone(),
            source: hf,
            utility: Some(value),
            cost_normalized_utility: Some(value / self.costs[hf]),
        })
    }

    /// High-fidelity query at the candidate farthest from the existing
    /// high-fidelity inputs.
    fn space_filling(&self, seed: u64) -> Decision {
        let hf = self.space.hf_index();
        let scaler = self.space.scaler();
        let existing: Vec<(Vec<f64>, &[usize])> = self
            .work
            .points()
            .iter()
            .filter(|p| p.s == hf)
            .map(|p| (scaler.to_unit(&p.x), p.t.as_slice()))
            .collect();
        let mut candidates = candidate_grid(&self.space, 256, seed);
        let gap = |(u, t): &(Vec<f64>, Vec<usize>)| {
            existing
                .iter()
                .map(|(v, s)| {
                    let dx: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
                    dx + t.iter().zip(s.iter()).filter(|(a, b)| a != b).count() as f64
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut best = 0;
        let mut best_gap = f64::NEG_INFINITY;
        for (i, c) in candidates.iter().enumerate() {
            let g = gap(c);
            if g > best_gap {
                best_gap = g;
                best = i;
            }
        }
        let (unit_x, t) = candidates.swap_remove(best);
        Decision { unit_x, t, source: hf, utility: None, cost_normalized_utility: None }
    }
}

impl StepDiagnostics {
    fn bare(model: ModelStatus) -> Self {
        Self {
            model,
            nll: None,
            jitter: None,
            successful_starts: None,
            utility: None,
            cost_normalized_utility: None,
            error: None,
        }
    }
}

#[cfg(test)]
mod tests;
