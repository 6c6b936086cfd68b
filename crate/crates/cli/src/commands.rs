//! Subcommand bodies. Each returns `Ok(true)` when everything it ran
//! completed, `Ok(false)` when some repetition aborted (artifacts are still
//! written), and an error when it could not run at all.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use mfbo_core::benchmarks::{rrmse, sobol_design, BenchmarkProblem, NAMES};
use mfbo_core::domain::{MultiSourceDataset, ProblemSpace};
use mfbo_core::emulator::{EmulatorConfig, FittedEmulator};
use mfbo_core::engine::{step0_exclude, BOConfig, ExclusionOutcome};
use mfbo_core::seeds::derive_seed;

use crate::config::{ExperimentConfig, Problem};
use crate::harness::{rep_seed, run_repetitions, write_artifacts, SummaryTable};

fn benchmark_only(config: &ExperimentConfig, what: &str) -> Result<BenchmarkProblem> {
    match config.resolve()? {
        Problem::Benchmark(p) => Ok(*p),
        Problem::Table(_) => bail!("`{what}` needs a benchmark problem; a tabular dataset has no response function"),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.6}"))
}

pub fn optimize(config: &ExperimentConfig, jobs: usize) -> Result<bool> {
    let problem = benchmark_only(config, "optimize")?;
    let dir = config.out_dir();
    let outcomes = run_repetitions(&problem, &config.bo, config.seed, config.repetitions, jobs);
    write_artifacts(&dir, &problem, &outcomes)?;
    let table = SummaryTable::new(&problem, &outcomes);
    for r in &table.rows {
        println!(
            "rep {:>3}  incumbent {}  cost@best {}  iterations {:>4}  {}",
            r.rep,
            fmt_opt(r.final_incumbent),
            fmt_opt(r.cost_at_best),
            r.iterations,
            r.termination
        );
    }
    if let (Some(inc), Some(cost)) = (table.final_incumbent(), table.cost_at_best()) {
        println!("median incumbent {:.6}  median cost@best {:.1}", inc.median, cost.median);
    }
    for o in &outcomes {
        match &o.history {
            Err(e) => eprintln!("rep {} failed: {e}", o.rep),
            Ok(h) if h.is_aborted() => eprintln!("rep {} aborted: {:?}", o.rep, h.termination),
            Ok(_) => {}
        }
    }
    println!("artifacts in {}", dir.display());
    Ok(outcomes.iter().all(|o| o.completed()))
}

/// Step-0 screening of the initial data (a benchmark design drawn with the
/// master seed, or the whole table).
pub fn screen(config: &ExperimentConfig) -> Result<(ExclusionOutcome, Vec<String>)> {
    let bo = BOConfig { seed: config.seed, ..config.bo.clone() };
    let (space, data, labels): (ProblemSpace, MultiSourceDataset, Vec<String>) = match config.resolve()? {
        Problem::Benchmark(p) => {
            let data = p.initial_data(config.seed)?;
            (p.space.clone(), data, p.source_labels.iter().map(|s| s.to_string()).collect())
        }
        Problem::Table(t) => {
            let labels = (0..t.space.num_sources()).map(|s| format!("source{s}")).collect();
            (t.space, t.dataset, labels)
        }
    };
    let outcome = step0_exclude(&space, &data, &bo)?;
    Ok((outcome, labels))
}

pub fn manifold(config: &ExperimentConfig) -> Result<bool> {
    let (outcome, labels) = screen(config)?;
    let report = &outcome.report;
    let Some(m) = &report.manifold else {
        bail!("{}", report.warning.clone().unwrap_or_else(|| "screening fit failed".into()));
    };
    let dir = config.out_dir();
    write(&dir, "manifold.csv", &m.to_csv())?;
    write(&dir, "verdicts.csv", &report.to_csv())?;
    for e in &report.entries {
        println!(
            "{:<8} distance {}  correlation {}  {}",
            labels[e.source],
            fmt_opt(e.distance),
            fmt_opt(e.correlation),
            if e.excluded { "excluded" } else { "kept" }
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(true)
}

pub fn rrmse_table(config: &ExperimentConfig) -> Result<bool> {
    let problem = benchmark_only(config, "rrmse")?;
    let n_mc = config.rrmse.n_mc;
    let hf = problem.space.hf_index();
    let mut csv = String::from("source_id,label,rrmse,reference,n_mc,seed\n");
    for s in (0..problem.num_sources()).filter(|&s| s != hf) {
        let value = rrmse(&problem, s, n_mc, config.seed)?;
        let reference = problem.reference_rrmse[s].map_or(String::new(), |r| r.to_string());
        writeln!(csv, "{s},{},{value},{reference},{n_mc},{}", problem.source_labels[s], config.seed).unwrap();
        println!("{:<6} {value:.4}  (listed {})", problem.source_labels[s], if reference.is_empty() { "-" } else { &reference });
    }
    write(&config.out_dir(), "rrmse.csv", &csv)?;
    Ok(true)
}

/// Held-out mean squared error of one repetition's fits.
#[derive(Debug, Clone, PartialEq)]
pub struct EmulationScore {
    pub rep: usize,
    pub seed: u64,
    /// Multi-source emulator, per source.
    pub lmgp: Vec<f64>,
    /// Emulator trained on the high-fidelity samples alone.
    pub hf_only: f64,
}

fn mse(em: &FittedEmulator, problem: &BenchmarkProblem, xs: &[Vec<f64>], source: usize, em_source: usize) -> Result<f64> {
    let mut total = 0.0;
    for x in xs {
        let truth = problem.evaluate(x, source)?;
        let p = em.space().point(x.clone(), vec![], em_source)?;
        total += (em.predict(&p).mean - truth).powi(2);
    }
    Ok(total / xs.len() as f64)
}

pub fn emulation_scores(problem: &BenchmarkProblem, emulator: &EmulatorConfig, master: u64, reps: usize, test_points: usize) -> Result<Vec<EmulationScore>> {
    let hf = problem.space.hf_index();
    (0..reps)
        .map(|rep| {
            let seed = rep_seed(master, rep);
            let data = problem.initial_data(seed)?;
            let fit_seed = derive_seed(seed, 0);
            let full = FittedEmulator::fit(&problem.space, &data, emulator, fit_seed)?;
            let hf_space = problem.space.with_sources(&[hf])?;
            let hf_data = data.retain_sources(&[hf])?;
            let single = FittedEmulator::fit(&hf_space, &hf_data, emulator, fit_seed)?;
            let xs: Vec<Vec<f64>> = sobol_design(&problem.space, test_points, Some(derive_seed(seed, 1)), hf)?
                .into_iter()
                .map(|p| p.x)
                .collect();
            let lmgp = (0..problem.num_sources()).map(|s| mse(&full, problem, &xs, s, s)).collect::<Result<_>>()?;
            let hf_only = mse(&single, problem, &xs, hf, 0)?;
            Ok(EmulationScore { rep, seed, lmgp, hf_only })
        })
        .collect()
}

pub fn emulate(config: &ExperimentConfig) -> Result<bool> {
    let problem = benchmark_only(config, "emulate")?;
    let scores = emulation_scores(&problem, &config.bo.emulator, config.seed, config.repetitions, config.emulate.test_points)?;
    let hf = problem.space.hf_index();
    let mut csv = String::from("rep,seed,model,source_id,label,mse\n");
    for sc in &scores {
        for (s, v) in sc.lmgp.iter().enumerate() {
            writeln!(csv, "{},{},lmgp,{s},{},{v}", sc.rep, sc.seed, problem.source_labels[s]).unwrap();
        }
        writeln!(csv, "{},{},hf_only,{hf},{},{}", sc.rep, sc.seed, problem.source_labels[hf], sc.hf_only).unwrap();
        println!("rep {:>3}  hf mse: lmgp {:.6e}  hf-only {:.6e}", sc.rep, sc.lmgp[hf], sc.hf_only);
    }
    let wins = scores.iter().filter(|s| s.lmgp[hf] < s.hf_only).count();
    println!("multi-source emulator better on {wins}/{} repetitions", scores.len());
    write(&config.out_dir(), "emulate.csv", &csv)?;
    Ok(true)
}

pub fn list() -> String {
    let mut out = String::from("name         inputs  sources  costs                         initial        listed rrmse\n");
    for name in NAMES {
        let p = mfbo_core::benchmarks::benchmark(name).expect("registered");
        let costs: Vec<String> = p.costs.iter().map(|c| c.to_string()).collect();
        let sizes: Vec<String> = p.initial_sizes.iter().map(|c| c.to_string()).collect();
        let listed: Vec<String> = p.reference_rrmse.iter().flatten().map(|c| c.to_string()).collect();
        writeln!(
            out,
            "{:<12} {:>6}  {:>7}  {:<29} {:<14} {}",
            name,
            p.space.dx(),
            p.num_sources(),
            costs.join("/"),
            sizes.join("/"),
            listed.join("/")
        )
        .unwrap();
    }
    out
}
