//! Comma-delimited ingestion of user-supplied multi-source datasets.
//!
//! The header names every column; a [`TableSchema`] says which of them are
//! numeric inputs, categorical inputs, the response and the integer source
//! ID. Categorical values may be arbitrary strings; their levels are the
//! sorted distinct values seen in the file. Numeric bounds are the observed
//! column ranges.

use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Direction, DomainError, MixedPoint, MultiSourceDataset, ProblemSpace};

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse { row: usize, column: String, value: String },
    #[error("row {row}: source id {id} is not a non-negative integer below {sources}")]
    BadSource { row: usize, id: String, sources: usize },
    #[error("numeric column `{0}` is constant; bounds would be empty")]
    ConstantColumn(String),
    #[error("categorical column `{0}` has fewer than 2 distinct levels")]
    SingleLevel(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSchema {
    pub numeric_columns: Vec<String>,
    #[serde(default)]
    pub categorical_columns: Vec<String>,
    pub response_column: String,
    pub source_column: String,
    /// Per-source sampling cost, indexed by source ID.
    pub costs: Vec<f64>,
    #[serde(default)]
    pub hf_source: usize,
    #[serde(default)]
    pub direction: Direction,
}

/// Parsed dataset plus the level names of each categorical column.
#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub space: ProblemSpace,
    pub dataset: MultiSourceDataset,
    pub level_names: Vec<Vec<String>>,
}

pub fn read_table<R: Read>(reader: R, schema: &TableSchema) -> Result<LoadedTable, TableError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = csv.headers()?.clone();
    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| TableError::MissingColumn(name.to_string()))
    };
    let numeric: Vec<usize> = schema.numeric_columns.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let categorical: Vec<usize> =
        schema.categorical_columns.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let response = find(&schema.response_column)?;
    let source = find(&schema.source_column)?;
    let sources = schema.costs.len();

    let records: Vec<csv::StringRecord> = csv.records().collect::<Result<_, _>>()?;
    let parse = |row: usize, col: usize, name: &str, rec: &csv::StringRecord| -> Result<f64, TableError> {
        let raw = rec.get(col).unwrap_or("");
        raw.parse::<f64>().map_err(|_| TableError::Parse {
            row,
            column: name.to_string(),
            value: raw.to_string(),
        })
    };

    let mut level_names = Vec::with_capacity(categorical.len());
    for (&col, name) in categorical.iter().zip(&schema.categorical_columns) {
        let levels: BTreeSet<String> = records.iter().map(|r| r.get(col).unwrap_or("").to_string()).collect();
        if levels.len() < 2 {
            return Err(TableError::SingleLevel(name.clone()));
        }
        level_names.push(levels.into_iter().collect::<Vec<_>>());
    }

    let mut rows = Vec::with_capacity(records.len());
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); numeric.len()];
    for (i, rec) in records.iter().enumerate() {
        let x = numeric
            .iter()
            .zip(&schema.numeric_columns)
            .map(|(&c, name)| parse(i + 1, c, name, rec))
            .collect::<Result<Vec<_>, _>>()?;
        for (b, &v) in bounds.iter_mut().zip(&x) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
        let t = categorical
            .iter()
            .zip(&level_names)
            .map(|(&c, names)| {
                let value = rec.get(c).unwrap_or("");
                names.iter().position(|n| n == value).expect("level collected above")
            })
            .collect::<Vec<_>>();
        let raw_source = rec.get(source).unwrap_or("");
        let s = raw_source
            .parse::<usize>()
            .ok()
            .filter(|&s| s < sources)
            .ok_or_else(|| TableError::BadSource { row: i + 1, id: raw_source.to_string(), sources })?;
        let y = parse(i + 1, response, &schema.response_column, rec)?;
        rows.push((x, t, s, y));
    }
    for (b, name) in bounds.iter().zip(&schema.numeric_columns) {
        if !(b.1 > b.0) {
            return Err(TableError::ConstantColumn(name.clone()));
        }
    }

    let space = ProblemSpace::new(
        bounds,
        level_names.iter().map(Vec::len).collect(),
        sources,
        schema.hf_source,
        schema.direction,
    )?;
    let mut dataset = MultiSourceDataset::empty(&space, schema.costs.clone())?;
    // Rows are grouped by source so that the stacked order matches assembly.
    rows.sort_by_key(|r| r.2);
    for (x, t, s, y) in rows {
        let point: MixedPoint = space.point(x, t, s)?;
        dataset.push(point, y)?;
    }
    Ok(LoadedTable { space, dataset, level_names })
}
