//! Seeded repetitions and the tables built from their histories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mfbo_core::benchmarks::BenchmarkProblem;
use mfbo_core::engine::{run_mfca, run_single_fidelity, AcquisitionChoice, BOConfig, RunHistory, Termination};
use mfbo_core::seeds::derive_seed;

/// Seed of repetition `rep`; independent of how repetitions are scheduled.
pub fn rep_seed(master: u64, rep: usize) -> u64 {
    derive_seed(master, rep as u64)
}

#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub rep: usize,
    pub seed: u64,
    /// Engine errors (bad preconditions) are kept per repetition so the
    /// others still produce artifacts.
    pub history: Result<RunHistory, String>,
}

impl RepOutcome {
    pub fn completed(&self) -> bool {
        self.history.as_ref().is_ok_and(|h| !h.is_aborted())
    }
}

/// One optimization run of `problem` with its own initial design.
pub fn run_once(problem: &BenchmarkProblem, bo: &BOConfig, seed: u64) -> Result<RunHistory, String> {
    let data = problem.initial_data(seed).map_err(|e| e.to_string())?;
    let config = BOConfig { seed, ..bo.clone() };
    let result = match config.af {
        AcquisitionChoice::Mfca => run_mfca(problem, &data, &config),
        _ => run_single_fidelity(problem, &data, &config),
    };
    result.map_err(|e| e.to_string())
}

/// Runs `reps` repetitions on at most `jobs` threads. Results come back in
/// repetition order whatever the scheduling.
pub fn run_repetitions(problem: &BenchmarkProblem, bo: &BOConfig, master: u64, reps: usize, jobs: usize) -> Vec<RepOutcome> {
    let work = |rep: usize| {
        let seed = rep_seed(master, rep);
        RepOutcome { rep, seed, history: run_once(problem, bo, seed) }
    };
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(|| (0..reps).into_par_iter().map(work).collect()),
        Err(_) => (0..reps).map(work).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rep: usize,
    pub seed: u64,
    pub final_incumbent: Option<f64>,
    pub cost_at_best: Option<f64>,
    pub iterations: usize,
    pub total_cost: f64,
    pub termination: String,
    /// Initial plus queried samples, per source in problem order.
    pub samples: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Quartiles {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self { q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub problem: String,
    pub source_labels: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

fn termination_name(t: &Termination) -> String {
    match t {
        Termination::Budget => "budget".into(),
        Termination::Stagnation => "stagnation".into(),
        Termination::IterationCap => "iteration_cap".into(),
        Termination::Aborted { .. } => "aborted".into(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

impl SummaryTable {
    pub fn new(problem: &BenchmarkProblem, outcomes: &[RepOutcome]) -> Self {
        let ds = problem.num_sources();
        let rows = outcomes
            .iter()
            .map(|o| match &o.history {
                Ok(h) => {
                    let mut samples = h.header.initial_counts.clone();
                    for r in &h.records {
                        samples[r.source] += 1;
                    }
                    SummaryRow {
                        rep: o.rep,
                        seed: o.seed,
                        final_incumbent: h.final_incumbent(),
                        cost_at_best: h.cost_at_best(),
                        iterations: h.iterations(),
                        total_cost: h.total_cost(),
                        termination: termination_name(&h.termination),
                        samples,
                    }
                }
                Err(_) => SummaryRow {
                    rep: o.rep,
                    seed: o.seed,
                    final_incumbent: None,
                    cost_at_best: None,
                    iterations: 0,
                    total_cost: 0.0,
                    termination: "error".into(),
                    samples: vec![0; ds],
                },
            })
            .collect();
        Self {
            problem: problem.name.to_string(),
            source_labels: problem.source_labels.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    pub fn final_incumbent(&self) -> Option<Quartiles> {
        Quartiles::of(self.rows.iter().filter_map(|r| r.final_incumbent))
    }

    pub fn cost_at_best(&self) -> Option<Quartiles> {
        Quartiles::of(self.rows.iter().filter_map(|r| r.cost_at_best))
    }

    pub fn iterations(&self) -> Option<Quartiles> {
        Quartiles::of(self.rows.iter().map(|r| r.iterations as f64))
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("rep,seed,final_incumbent,cost_at_best,iterations,total_cost,termination");
        for l in &self.source_labels {
            write!(out, ",samples_{l}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(
                out,
                "{},{},{},{},{},{},{}",
                r.rep,
                r.seed,
                fmt_opt(r.final_incumbent),
                fmt_opt(r.cost_at_best),
                r.iterations,
                r.total_cost,
                r.termination
            )
            .unwrap();
            for n in &r.samples {
                write!(out, ",{n}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Median and quartiles of the per-repetition columns.
    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("statistic,final_incumbent,cost_at_best,iterations\n");
        let cols = [self.final_incumbent(), self.cost_at_best(), self.iterations()];
        for (name, pick) in [("q1", 0), ("median", 1), ("q3", 2)] {
            out.push_str(name);
            for c in &cols {
                let v = c.map(|q| [q.q1, q.median, q.q3][pick]);
                write!(out, ",{}", fmt_opt(v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Per-repetition, per-source sample counts split into initial and
    /// queried samples.
    pub fn frequency_csv(&self, outcomes: &[RepOutcome]) -> String {
        let mut out = String::from("rep,source_id,label,initial,queried\n");
        for o in outcomes {
            let Ok(h) = &o.history else { continue };
            let queried = h.query_counts();
            for (s, label) in self.source_labels.iter().enumerate() {
                writeln!(out, "{},{s},{label},{},{}", o.rep, h.header.initial_counts[s], queried[s]).unwrap();
            }
        }
        out
    }
}

/// Writes every artifact of an `optimize` run into `dir`; returns the paths
/// written.
pub fn write_artifacts(dir: &Path, problem: &BenchmarkProblem, outcomes: &[RepOutcome]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let mut put = |name: String, text: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    for o in outcomes {
        match &o.history {
            Ok(h) => {
                put(format!("history_rep{}.jsonl", o.rep), &h.to_ndjson())?;
                if let Some(report) = &h.header.exclusion {
                    put(format!("exclusion_rep{}.csv", o.rep), &report.to_csv())?;
                    if let Some(m) = &report.manifold {
                        put(format!("manifold_rep{}.csv", o.rep), &m.to_csv())?;
                    }
                }
            }
            Err(e) => put(format!("error_rep{}.txt", o.rep), &format!("{e}\n"))?,
        }
    }
    let table = SummaryTable::new(problem, outcomes);
    put("summary.csv".into(), &table.rows_csv())?;
    put("summary_aggregate.csv".into(), &table.aggregate_csv())?;
    put("frequency.csv".into(), &table.frequency_csv(outcomes))?;
    Ok(written)
}
