use super::*;
use crate::benchmarks::{benchmark, sobol_design};

fn quick() -> BOConfig {
    BOConfig {
        search: SearchConfig { candidates: 64, starts: 4, best_seen: 4, local_iters: 20, ..Default::default() },
        emulator: EmulatorConfig { starts: 4, ..Default::default() },
        ..Default::default()
    }
}

fn one_d(name: &str, cost: f64, f: fn(f64) -> f64) -> FnObjective<impl Fn(&MixedPoint) -> f64 + Sync> {
    FnObjective {
        name: name.into(),
        space: ProblemSpace::new(vec![(0.0, 1.0)], vec![], 1, 0, Direction::Minimize).unwrap(),
        costs: vec![cost],
        f: move |p: &MixedPoint| f(p.x[0]),
    }
}

fn initial<O: Objective>(o: &O, sizes: &[usize], seed: u64) -> MultiSourceDataset {
    let mut data = MultiSourceDataset::empty(o.space(), o.costs().to_vec()).unwrap();
    for (s, &n) in sizes.iter().enumerate() {
        for p in sobol_design(o.space(), n, Some(derive_seed(seed, 50 + s as u64)), s).unwrap() {
            let y = o.evaluate(&p).unwrap();
            data.push(p, y).unwrap();
        }
    }
    data
}

fn synthetic_history(initial: Option<f64>, incumbents: &[f64], costs: &[f64]) -> RunHistory {
    let header = HistoryHeader {
        problem: "synthetic".into(),
        config: BOConfig::default(),
        mode: AcquisitionChoice::Ei,
        direction: Direction::Minimize,
        costs: costs.to_vec(),
        hf_index: 0,
        kept_sources: (0..costs.len()).collect(),
        exclusion: None,
        initial_counts: vec![1; costs.len()],
        initial_cost: costs[0],
        initial_incumbent: initial,
    };
    let mut cumulative = costs[0];
    let records = incumbents
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            cumulative += costs[0];
            IterationRecord {
                iteration: i + 1,
                point: MixedPoint { x: vec![0.0], t: vec![], s: 0 },
                response: v,
                source: 0,
                cost: costs[0],
                cumulative_cost: cumulative,
                incumbent: Some(v),
                excluded: vec![],
                diagnostics: StepDiagnostics::bare(ModelStatus::Fitted),
            }
        })
        .collect();
    RunHistory { header, records, termination: Termination::IterationCap }
}

#[test]
fn stagnation_after_limit() {
    let cfg = BOConfig { budget_max: 1e9, ..Default::default() };
    let h = synthetic_history(Some(1.0), &[1.0; 50], &[1.0]);
    assert_eq!(check_termination(&h, &cfg), TerminationCheck::Stagnation);
    let h = synthetic_history(Some(1.0), &[1.0; 49], &[1.0]);
    assert_eq!(check_termination(&h, &cfg), TerminationCheck::Continue);
    // an improvement at iteration 49 resets the counter
    let mut inc = vec![1.0; 60];
    inc[48..].iter_mut().for_each(|v| *v = 0.5);
    let h = synthetic_history(Some(1.0), &inc, &[1.0]);
    assert_eq!(check_termination(&h, &cfg), TerminationCheck::Continue);
}

#[test]
fn budget_stop_when_cost_reaches_budget() {
    let cfg = BOConfig { budget_max: 10.0, ..Default::default() };
    let h = synthetic_history(Some(1.0), &[0.9, 0.8, 0.7, 0.6], &[2.0]);
    assert_eq!(h.total_cost(), 10.0);
    assert_eq!(check_termination(&h, &cfg), TerminationCheck::Budget);
    let h = synthetic_history(Some(1.0), &[0.9, 0.8, 0.7], &[2.0]);
    assert_eq!(check_termination(&h, &cfg), TerminationCheck::Continue);
}

#[test]
fn config_validation() {
    assert!(BOConfig { budget_max: 0.0, ..Default::default() }.validate().is_err());
    assert!(BOConfig { stagnation_limit: 0, ..Default::default() }.validate().is_err());
    assert!(BOConfig { exclusion_correlation_min: 1.0, ..Default::default() }.validate().is_err());
    assert!(BOConfig::default().validate().is_ok());
    assert_eq!("KG".parse::<AcquisitionChoice>(), Ok(AcquisitionChoice::Kg));
    assert!("ucb".parse::<AcquisitionChoice>().is_err());
}

#[test]
fn single_fidelity_spends_budget_exactly() {
    let p = benchmark("double-well").unwrap();
    let data = p.initial_data(3).unwrap();
    let cfg = BOConfig { af: AcquisitionChoice::Ei, budget_max: 40_000.0, seed: 3, ..quick() };
    let h = run_single_fidelity(&p, &data, &cfg).unwrap();
    assert_eq!(h.termination, Termination::Budget);
    assert_eq!(h.header.initial_counts[0] + h.iterations(), 40);
    assert_eq!(h.total_cost(), 40_000.0);
    for (i, r) in h.records.iter().enumerate() {
        assert_eq!(r.iteration, i + 1);
        assert_eq!(r.source, 0);
        assert_eq!(r.cumulative_cost, 5000.0 + 1000.0 * (i + 1) as f64);
    }
}

#[test]
fn constant_response_stops_on_stagnation() {
    let o = one_d("flat", 1.0, |_| 2.5);
    let data = initial(&o, &[3], 1);
    let cfg = BOConfig { af: AcquisitionChoice::Ei, budget_max: 1e6, stagnation_limit: 12, ..quick() };
    let h = run_single_fidelity(&o, &data, &cfg).unwrap();
    assert_eq!(h.termination, Termination::Stagnation);
    assert_eq!(h.iterations(), 12);
    assert!(h.records.iter().all(|r| r.diagnostics.model == ModelStatus::SpaceFilling));
    assert!(h.records.iter().all(|r| r.incumbent == Some(2.5)));
}

#[test]
fn ei_finds_quadratic_minimum() {
    let f = |x: f64| (x - 0.3).powi(2) * 4.0 - 1.0;
    let mut hits = 0;
    for seed in 0..20 {
        let o = one_d("quadratic", 1.0, f);
        let data = initial(&o, &[3], seed);
        let cfg = BOConfig { af: AcquisitionChoice::Ei, budget_max: 18.0, seed, ..quick() };
        let h = run_single_fidelity(&o, &data, &cfg).unwrap();
        assert!(h.iterations() <= 15);
        if (h.final_incumbent().unwrap() + 1.0).abs() < 1e-2 {
            hits += 1;
        }
    }
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn pi_and_kg_run() {
    let f = |x: f64| (6.0 * x).sin() + x;
    for af in [AcquisitionChoice::Pi, AcquisitionChoice::Kg] {
        let o = one_d("wave", 1.0, f);
        let data = initial(&o, &[4], 2);
        let cfg = BOConfig { af, budget_max: 10.0, kg_candidates: 16, kg_grid: 16, kg_draws: 8, ..quick() };
        let h = run_single_fidelity(&o, &data, &cfg).unwrap();
        assert_eq!(h.iterations(), 6, "{af}");
        assert!(h.records.iter().all(|r| r.diagnostics.utility.is_some()));
    }
}

#[test]
fn mfca_rejected_for_single_fidelity() {
    let o = one_d("wave", 1.0, |x| x);
    let data = initial(&o, &[3], 0);
    assert!(run_single_fidelity(&o, &data, &quick()).is_err());
}

#[test]
fn mfca_with_one_source_matches_pi() {
    let o = one_d("wave", 1.0, |x| (5.0 * x).cos() * x);
    let data = initial(&o, &[4], 7);
    let base = BOConfig { budget_max: 12.0, seed: 7, ..quick() };
    let a = run_mfca(&o, &data, &base).unwrap();
    let b = run_single_fidelity(&o, &data, &BOConfig { af: AcquisitionChoice::Pi, ..base }).unwrap();
    assert_eq!(a.header.mode, AcquisitionChoice::Pi);
    assert_eq!(a.records, b.records);
    assert_eq!(a.termination, b.termination);
}

#[test]
fn mfca_bookkeeping_and_determinism() {
    let p = benchmark("double-well").unwrap();
    let data = p.initial_data(4).unwrap();
    let cfg = BOConfig { budget_max: 9000.0, seed: 4, max_iterations: Some(25), ..quick() };
    let h = run_mfca(&p, &data, &cfg).unwrap();
    assert!(h.iterations() > 0);
    let mut cumulative = data.total_cost();
    let mut best = h.header.initial_incumbent;
    for r in &h.records {
        cumulative += r.cost;
        assert_eq!(r.cumulative_cost, cumulative);
        assert_eq!(r.cost, p.costs[r.source]);
        if r.source == 0 {
            best = Some(best.map_or(r.response, |b: f64| b.min(r.response)));
        }
        assert_eq!(r.incumbent, best, "only high-fidelity samples move the incumbent");
    }
    assert!(h.total_cost() <= cfg.budget_max);
    let again = run_mfca(&p, &data, &cfg).unwrap();
    assert_eq!(h, again);
}

#[test]
fn budget_only_run_respects_budget() {
    let p = benchmark("double-well").unwrap();
    let data = p.initial_data(5).unwrap();
    let cfg = BOConfig { budget_max: 6500.0, stagnation_limit: usize::MAX, seed: 5, ..quick() };
    let h = run_mfca(&p, &data, &cfg).unwrap();
    assert_eq!(h.termination, Termination::Budget);
    assert!(h.total_cost() <= cfg.budget_max);
}

#[test]
fn history_round_trips_through_ndjson() {
    let p = benchmark("double-well").unwrap();
    let data = p.initial_data(6).unwrap();
    let cfg = BOConfig { budget_max: 8000.0, seed: 6, max_iterations: Some(5), ..quick() };
    let h = run_mfca(&p, &data, &cfg).unwrap();
    let text = h.to_ndjson();
    assert_eq!(text.lines().count(), h.iterations() + 2);
    assert!(text.lines().next().unwrap().contains("\"record\":\"header\""));
    assert_eq!(RunHistory::from_ndjson(&text).unwrap(), h);
}

#[test]
fn twin_sources_are_kept() {
    let space = ProblemSpace::new(vec![(0.0, 1.0)], vec![], 2, 0, Direction::Minimize).unwrap();
    let o = FnObjective { name: "twins".into(), space, costs: vec![10.0, 1.0], f: |p: &MixedPoint| (7.0 * p.x[0]).sin() };
    let data = initial(&o, &[8, 8], 0);
    let out = step0_exclude(o.space(), &data, &quick()).unwrap();
    assert_eq!(out.kept, vec![0, 1]);
    assert!(out.report.entries[0].correlation.unwrap() > 0.9);
}

#[test]
fn unrelated_sources_are_dropped() {
    let space = ProblemSpace::new(vec![(0.0, 1.0)], vec![], 3, 0, Direction::Minimize).unwrap();
    let o = FnObjective {
        name: "unrelated".into(),
        space,
        costs: vec![10.0, 1.0, 1.0],
        f: |p: &MixedPoint| match p.s {
            0 => (4.0 * p.x[0]).sin(),
            1 => -2.0 * (4.0 * p.x[0]).sin() + 0.3 * (9.0 * p.x[0]).cos(),
            _ => -(4.0 * p.x[0]).sin() * 3.0 + (19.0 * p.x[0]).sin(),
        },
    };
    let data = initial(&o, &[8, 12, 12], 1);
    let cfg = BOConfig { budget_max: 40.0, seed: 1, ..quick() };
    let out = step0_exclude(o.space(), &data, &cfg).unwrap();
    assert_eq!(out.kept, vec![0], "{:?}", out.report);
    let h = run_mfca(&o, &data, &cfg).unwrap();
    assert_eq!(h.header.mode, AcquisitionChoice::Pi);
    assert_eq!(h.header.kept_sources, vec![0]);
    assert!(h.records.iter().all(|r| r.source == 0 && r.excluded == vec![1, 2]));
}

#[test]
fn empty_sources_are_not_judged() {
    let p = benchmark("double-well").unwrap();
    let data = p.initial_data(0).unwrap();
    let out = step0_exclude(&p.space, &data, &quick()).unwrap();
    assert_eq!(out.kept, vec![0, 1]);
    assert_eq!(out.report.entries[0].samples, 0);
    assert!(!out.report.entries[0].excluded);
}

#[test]
fn repeated_fit_failure_aborts() {
    let o = one_d("wave", 1.0, |x| (5.0 * x).sin());
    let data = initial(&o, &[4], 0);
    let mut cfg = BOConfig { af: AcquisitionChoice::Ei, budget_max: 100.0, ..quick() };
    cfg.emulator.jitter_ladder.clear();
    let h = run_single_fidelity(&o, &data, &cfg).unwrap();
    assert!(h.is_aborted(), "{:?}", h.termination);
    assert_eq!(h.iterations(), 1);
    assert_eq!(h.records[0].diagnostics.model, ModelStatus::FitFailed);
}

#[test]
fn objective_errors_abort_with_partial_history() {
    let p = benchmark("rosenbrock").unwrap();
    let data = p.initial_data(0).unwrap();
    let shrunk = FnObjective {
        name: "broken".into(),
        space: p.space.clone(),
        costs: p.costs.clone(),
        f: |_: &MixedPoint| f64::NAN,
    };
    let h = run_mfca(&shrunk, &data, &BOConfig { exclude: false, ..quick() }).unwrap();
    assert!(h.is_aborted());
    assert!(h.records.is_empty());
}
