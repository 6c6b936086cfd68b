//! Mixed numeric / categorical / source input domain.
//!
//! A [`ProblemSpace`] describes bounded numeric inputs, categorical inputs
//! with a fixed number of levels each, and the number of data sources. Points
//! in that space are [`MixedPoint`]s and observations from all sources are
//! stacked into one [`MultiSourceDataset`], each row tagged with its source.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("numeric input {index} has an empty interval [{lo}, {hi}]")]
    EmptyInterval { index: usize, lo: f64, hi: f64 },
    #[error("categorical input {index} has {levels} level(s); at least 2 are required")]
    TooFewLevels { index: usize, levels: usize },
    #[error("at least one data source is required")]
    NoSources,
    #[error("high-fidelity source {hf} is out of range for {sources} source(s)")]
    HighFidelityOutOfRange { hf: usize, sources: usize },
    #[error("level {level} of categorical input {index} is out of range (levels: {levels})")]
    LevelOutOfRange { index: usize, level: usize, levels: usize },
    #[error("expected {expected} categorical value(s), got {got}")]
    CategoricalArity { expected: usize, got: usize },
    #[error("expected {expected} numeric value(s), got {got}")]
    NumericArity { expected: usize, got: usize },
    #[error("source {source_index} is out of range for {sources} source(s)")]
    SourceOutOfRange { source_index: usize, sources: usize },
    #[error("source {source_index}: row {row} has {got} column(s), expected {expected}")]
    RaggedTable { source_index: usize, row: usize, got: usize, expected: usize },
    #[error("source {source_index}: {rows} input row(s) but {responses} response(s)")]
    ResponseCount { source_index: usize, rows: usize, responses: usize },
    #[error("source {source_index}: categorical value {value} is not a level index")]
    NotALevel { source_index: usize, value: f64 },
    #[error("cost of source {source_index} must be strictly positive, got {cost}")]
    NonPositiveCost { source_index: usize, cost: f64 },
    #[error("expected {expected} cost(s), got {got}")]
    CostCount { expected: usize, got: usize },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
}

/// Whether the objective is maximized or minimized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    /// Multiplier that maps user responses into the maximization convention.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }

    /// `true` when `candidate` is strictly better than `reference`.
    pub fn improves(self, candidate: f64, reference: f64) -> bool {
        match self {
            Direction::Maximize => candidate > reference,
            Direction::Minimize => candidate < reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpace {
    numeric_bounds: Vec<(f64, f64)>,
    categorical_levels: Vec<usize>,
    num_sources: usize,
    hf_index: usize,
    direction: Direction,
}

impl ProblemSpace {
    /// Source indices are zero-based; `hf_index` names the trusted source.
    pub fn new(
        numeric_bounds: Vec<(f64, f64)>,
        categorical_levels: Vec<usize>,
        num_sources: usize,
        hf_index: usize,
        direction: Direction,
    ) -> Result<Self, DomainError> {
        for (index, &(lo, hi)) in numeric_bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(DomainError::NonFinite { what: "numeric bounds" });
            }
            if lo >= hi {
                return Err(DomainError::EmptyInterval { index, lo, hi });
            }
        }
        for (index, &levels) in categorical_levels.iter().enumerate() {
            if levels < 2 {
                return Err(DomainError::TooFewLevels { index, levels });
            }
        }
        if num_sources == 0 {
            return Err(DomainError::NoSources);
        }
        if hf_index >= num_sources {
            return Err(DomainError::HighFidelityOutOfRange { hf: hf_index, sources: num_sources });
        }
        Ok(Self { numeric_bounds, categorical_levels, num_sources, hf_index, direction })
    }

    pub fn dx(&self) -> usize {
        self.numeric_bounds.len()
    }

    pub fn dt(&self) -> usize {
        self.categorical_levels.len()
    }

    pub fn numeric_bounds(&self) -> &[(f64, f64)] {
        &self.numeric_bounds
    }

    pub fn categorical_levels(&self) -> &[usize] {
        &self.categorical_levels
    }

    /// Total width of the grouped one-hot prior, `Σ l_i`.
    pub fn total_levels(&self) -> usize {
        self.categorical_levels.iter().sum()
    }

    pub fn num_sources(&self) -> usize {
        self.num_sources
    }

    pub fn hf_index(&self) -> usize {
        self.hf_index
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Number of distinct categorical combinations (1 when there are none).
    pub fn categorical_combinations(&self) -> usize {
        self.categorical_levels.iter().product()
    }

    /// Same space restricted to `kept` sources, renumbered in the given order.
    /// The high-fidelity source must be among them.
    pub fn with_sources(&self, kept: &[usize]) -> Result<Self, DomainError> {
        let hf = kept
            .iter()
            .position(|&s| s == self.hf_index)
            .ok_or(DomainError::HighFidelityOutOfRange { hf: self.hf_index, sources: kept.len() })?;
        for &s in kept {
            self.check_source(s)?;
        }
        Self::new(
            self.numeric_bounds.clone(),
            self.categorical_levels.clone(),
            kept.len(),
            hf,
            self.direction,
        )
    }

    pub fn check_source(&self, source: usize) -> Result<(), DomainError> {
        if source >= self.num_sources {
            return Err(DomainError::SourceOutOfRange { source_index: source, sources: self.num_sources });
        }
        Ok(())
    }

    pub fn check_levels(&self, t: &[usize]) -> Result<(), DomainError> {
        if t.len() != self.dt() {
            return Err(DomainError::CategoricalArity { expected: self.dt(), got: t.len() });
        }
        for (index, (&level, &levels)) in t.iter().zip(&self.categorical_levels).enumerate() {
            if level >= levels {
                return Err(DomainError::LevelOutOfRange { index, level, levels });
            }
        }
        Ok(())
    }

    /// Validates arity, level indices and source; numeric values are clamped
    /// into their bounds.
    pub fn point(&self, x: Vec<f64>, t: Vec<usize>, s: usize) -> Result<MixedPoint, DomainError> {
        if x.len() != self.dx() {
            return Err(DomainError::NumericArity { expected: self.dx(), got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DomainError::NonFinite { what: "numeric input" });
        }
        self.check_levels(&t)?;
        self.check_source(s)?;
        let x = x
            .into_iter()
            .zip(&self.numeric_bounds)
            .map(|(v, &(lo, hi))| v.clamp(lo, hi))
            .collect();
        Ok(MixedPoint { x, t, s })
    }

    pub fn scaler(&self) -> UnitScaler {
        UnitScaler { bounds: self.numeric_bounds.clone() }
    }
}

/// A point with numeric coordinates `x`, categorical level indices `t`, and
/// the source `s` it is (or would be) observed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedPoint {
    pub x: Vec<f64>,
    pub t: Vec<usize>,
    pub s: usize,
}

impl MixedPoint {
    pub fn with_source(&self, s: usize) -> Self {
        Self { x: self.x.clone(), t: self.t.clone(), s }
    }
}

/// Grouped one-hot prior for a categorical combination: one block of width
/// `l_i` per categorical input with a single 1 at the chosen level.
pub fn encode_categorical(t: &[usize], space: &ProblemSpace) -> Result<Vec<f64>, DomainError> {
    space.check_levels(t)?;
    let mut zeta = vec![0.0; space.total_levels()];
    for index in categorical_rows(t, space.categorical_levels()) {
        zeta[index] = 1.0;
    }
    Ok(zeta)
}

/// Row indices of the grouped one-hot prior that are set for `t`.
pub fn categorical_rows<'a>(t: &'a [usize], levels: &'a [usize]) -> impl Iterator<Item = usize> + 'a {
    let mut offset = 0;
    t.iter().zip(levels).map(move |(&level, &width)| {
        let row = offset + level;
        offset += width;
        row
    })
}

/// One-hot prior of a source identifier.
pub fn encode_source(s: usize, num_sources: usize) -> Result<Vec<f64>, DomainError> {
    if s >= num_sources {
        return Err(DomainError::SourceOutOfRange { source_index: s, sources: num_sources });
    }
    let mut zeta = vec![0.0; num_sources];
    zeta[s] = 1.0;
    Ok(zeta)
}

/// Affine map between the numeric bounds and the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScaler {
    bounds: Vec<(f64, f64)>,
}

impl UnitScaler {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, DomainError> {
        for (index, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi - lo > 0.0) || !(hi - lo).is_finite() {
                return Err(DomainError::EmptyInterval { index, lo, hi });
            }
        }
        Ok(Self { bounds })
    }

    pub fn width(&self, k: usize) -> f64 {
        let (lo, hi) = self.bounds[k];
        hi - lo
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(&v, &(lo, hi))| (v - lo) / (hi - lo)).collect()
    }

    /// Inverse map, clamped so that rounding never leaves the bounds.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| (lo + v * (hi - lo)).clamp(lo, hi))
            .collect()
    }
}

/// One source's raw table: `dx` numeric columns followed by `dt` categorical
/// columns holding level indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SourceTable {
    pub rows: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
}

/// Observations from every source, concatenated in source order at assembly
/// time and appended to afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSourceDataset {
    points: Vec<MixedPoint>,
    responses: Vec<f64>,
    costs: Vec<f64>,
}

impl MultiSourceDataset {
    pub fn empty(space: &ProblemSpace, costs: Vec<f64>) -> Result<Self, DomainError> {
        check_costs(&costs, space.num_sources())?;
        Ok(Self { points: Vec::new(), responses: Vec::new(), costs })
    }

    /// Stacks per-source tables, tagging each row with its source index.
    pub fn assemble(
        space: &ProblemSpace,
        tables: &[SourceTable],
        costs: Vec<f64>,
    ) -> Result<Self, DomainError> {
        if tables.len() != space.num_sources() {
            return Err(DomainError::CostCount { expected: space.num_sources(), got: tables.len() });
        }
        let mut dataset = Self::empty(space, costs)?;
        let width = space.dx() + space.dt();
        for (source, table) in tables.iter().enumerate() {
            if table.rows.len() != table.responses.len() {
                return Err(DomainError::ResponseCount {
                    source_index: source,
                    rows: table.rows.len(),
                    responses: table.responses.len(),
                });
            }
            for (row_index, row) in table.rows.iter().enumerate() {
                if row.len() != width {
                    return Err(DomainError::RaggedTable {
                        source_index: source,
                        row: row_index,
                        got: row.len(),
                        expected: width,
                    });
                }
                let x = row[..space.dx()].to_vec();
                let t = row[space.dx()..]
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                            Ok(v as usize)
                        } else {
                            Err(DomainError::NotALevel { source_index: source, value: v })
                        }
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let point = space.point(x, t, source)?;
                dataset.push(point, table.responses[row_index])?;
            }
        }
        Ok(dataset)
    }

    pub fn push(&mut self, point: MixedPoint, response: f64) -> Result<(), DomainError> {
        if !response.is_finite() {
            return Err(DomainError::NonFinite { what: "response" });
        }
        if point.s >= self.costs.len() {
            return Err(DomainError::SourceOutOfRange { source_index: point.s, sources: self.costs.len() });
        }
        self.points.push(point);
        self.responses.push(response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[MixedPoint] {
        &self.points
    }

    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn num_sources(&self) -> usize {
        self.costs.len()
    }

    /// Per-source sample counts `n_j`.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.costs.len()];
        for p in &self.points {
            counts[p.s] += 1;
        }
        counts
    }

    /// Total cost of acquiring every row in the dataset.
    pub fn total_cost(&self) -> f64 {
        self.points.iter().map(|p| self.costs[p.s]).sum()
    }

    /// Best response of a source under `direction`, if it has any rows.
    pub fn best_of_source(&self, source: usize, direction: Direction) -> Option<f64> {
        self.points
            .iter()
            .zip(&self.responses)
            .filter(|(p, _)| p.s == source)
            .map(|(_, &y)| y)
            .fold(None, |best, y| match best {
                Some(b) if !direction.improves(y, b) => Some(b),
                _ => Some(y),
            })
    }

    /// Inverse of [`assemble`](Self::assemble): rows of each source in their
    /// original order.
    pub fn split_by_source(&self, space: &ProblemSpace) -> Vec<SourceTable> {
        let mut tables = vec![SourceTable::default(); self.costs.len()];
        for (p, &y) in self.points.iter().zip(&self.responses) {
            let mut row = p.x.clone();
            row.extend(p.t.iter().map(|&l| l as f64));
            debug_assert_eq!(row.len(), space.dx() + space.dt());
            tables[p.s].rows.push(row);
            tables[p.s].responses.push(y);
        }
        tables
    }

    /// Keeps rows of the `kept` sources, renumbering source `kept[i]` to `i`.
    pub fn retain_sources(&self, kept: &[usize]) -> Result<Self, DomainError> {
        let mut remap = vec![None; self.costs.len()];
        for (new, &old) in kept.iter().enumerate() {
            if old >= self.costs.len() {
                return Err(DomainError::SourceOutOfRange { source_index: old, sources: self.costs.len() });
            }
            remap[old] = Some(new);
        }
        let mut out = Self {
            points: Vec::new(),
            responses: Vec::new(),
            costs: kept.iter().map(|&s| self.costs[s]).collect(),
        };
        for (p, &y) in self.points.iter().zip(&self.responses) {
            if let Some(new) = remap[p.s] {
                out.points.push(p.with_source(new));
                out.responses.push(y);
            }
        }
        Ok(out)
    }

    /// Same rows with every response multiplied by `factor`.
    pub fn scaled_responses(&self, factor: f64) -> Self {
        Self {
            points: self.points.clone(),
            responses: self.responses.iter().map(|y| y * factor).collect(),
            costs: self.costs.clone(),
        }
    }
}

fn check_costs(costs: &[f64], sources: usize) -> Result<(), DomainError> {
    if costs.len() != sources {
        return Err(DomainError::CostCount { expected: sources, got: costs.len() });
    }
    for (source_index, &cost) in costs.iter().enumerate() {
        if !(cost > 0.0) || !cost.is_finite() {
            return Err(DomainError::NonPositiveCost { source_index, cost });
        }
    }
    Ok(())
}
