//! Experiment configuration: a TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mfbo_core::benchmarks::{benchmark, BenchmarkProblem, NAMES};
use mfbo_core::engine::{AcquisitionChoice, BOConfig};
use mfbo_core::table::{read_table, LoadedTable, TableSchema};

/// Output directory used when neither the flag nor the config names one.
pub const OUT_DIR_ENV: &str = "MFBO_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "mfbo-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(flatten)]
    pub schema: TableSchema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmulateConfig {
    /// Held-out quasi-random test points per source.
    pub test_points: usize,
}

impl Default for EmulateConfig {
    fn default() -> Self {
        Self { test_points: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrmseConfig {
    pub n_mc: usize,
}

impl Default for RrmseConfig {
    fn default() -> Self {
        Self { n_mc: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Registered benchmark name.
    pub problem: Option<String>,
    /// User-supplied multi-source table, used instead of `problem`.
    pub dataset: Option<DatasetConfig>,
    pub repetitions: usize,
    /// Master seed; repetition `i` runs on a stream derived from it, and
    /// `bo.seed` is overwritten accordingly.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub costs: Option<Vec<f64>>,
    pub initial_sizes: Option<Vec<usize>>,
    pub bo: BOConfig,
    pub emulate: EmulateConfig,
    pub rrmse: RrmseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: None,
            dataset: None,
            repetitions: 1,
            seed: 0,
            out: None,
            costs: None,
            initial_sizes: None,
            bo: BOConfig::default(),
            emulate: EmulateConfig::default(),
            rrmse: RrmseConfig::default(),
        }
    }
}

/// Command-line values that replace config entries when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub problem: Option<String>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    pub out: Option<PathBuf>,
    pub af: Option<AcquisitionChoice>,
    pub no_exclude: bool,
    pub budget: Option<f64>,
    pub stagnation: Option<usize>,
}

/// What the experiment runs on.
pub enum Problem {
    Benchmark(Box<BenchmarkProblem>),
    Table(Box<LoadedTable>),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut config = Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        // relative dataset paths are taken from the config's directory
        if let (Some(d), Some(dir)) = (config.dataset.as_mut(), path.parent()) {
            if d.path.is_relative() {
                d.path = dir.join(&d.path);
            }
        }
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = &o.problem {
            self.problem = Some(p.clone());
            self.dataset = None;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.reps {
            self.repetitions = r;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(af) = o.af {
            self.bo.af = af;
        }
        if o.no_exclude {
            self.bo.exclude = false;
        }
        if let Some(b) = o.budget {
            self.bo.budget_max = b;
        }
        if let Some(s) = o.stagnation {
            self.bo.stagnation_limit = s;
        }
    }

    /// Flag or config value, then the environment, then the built-in default.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            bail!("repetitions must be at least 1");
        }
        match (&self.problem, &self.dataset) {
            (Some(_), Some(_)) => bail!("give either `problem` or `dataset`, not both"),
            (None, None) => bail!("no problem: set `problem` (one of {}) or `dataset`", NAMES.join(", ")),
            (Some(name), None) if benchmark(name).is_none() => {
                bail!("unknown problem `{name}` (expected one of {})", NAMES.join(", "))
            }
            (None, Some(d)) if !d.path.exists() => bail!("dataset {} does not exist", d.path.display()),
            _ => {}
        }
        if let Some(c) = &self.costs {
            if c.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                bail!("cost overrides must be positive and finite");
            }
        }
        self.bo.validate()?;
        Ok(())
    }

    /// Validated problem with the cost and initial-size overrides applied.
    pub fn resolve(&self) -> Result<Problem> {
        self.validate()?;
        if let Some(name) = &self.problem {
            let mut p = benchmark(name).expect("checked by validate");
            let ds = p.num_sources();
            if let Some(c) = &self.costs {
                if c.len() != ds {
                    bail!("`costs` has {} entries but {} has {ds} sources", c.len(), p.name);
                }
                p.costs = c.clone();
            }
            if let Some(n) = &self.initial_sizes {
                if n.len() != ds {
                    bail!("`initial_sizes` has {} entries but {} has {ds} sources", n.len(), p.name);
                }
                p.initial_sizes = n.clone();
            }
            return Ok(Problem::Benchmark(Box::new(p)));
        }
        let d = self.dataset.as_ref().expect("checked by validate");
        let mut schema = d.schema.clone();
        if let Some(c) = &self.costs {
            schema.costs = c.clone();
        }
        let file = std::fs::File::open(&d.path).with_context(|| format!("opening {}", d.path.display()))?;
        let table = read_table(file, &schema).with_context(|| format!("reading {}", d.path.display()))?;
        Ok(Problem::Table(Box::new(table)))
    }
}
