use std::fs;
use std::path::Path;

use anchorsim::dgm::Scenario;
use anchorsim::harness::output::{
    Manifest, MANIFEST_FILE, REPLICATES_FILE, SUMMARY_FILE, TUNING_FILE,
};
use anchorsim::harness::{
    build_grid, draw_replicate, run_grid, run_replicate, Census, GridConfig, ReplicateContext,
    RunConfig, ScenarioFilter, ScenarioState,
};
use anchorsim::metrics::ReplicateRecord;
use anchorsim::validate::DataSet;
use tempfile::tempdir;

fn small_config() -> RunConfig {
    let mut cfg = RunConfig {
        n_rep: 10,
        ..RunConfig::default()
    };
    cfg.population.n_villages = 60;
    cfg.grid = GridConfig {
        village_fractions: vec![0.5, 0.25],
        response_rates: vec![0.8],
        xis: vec![1.0, 1.5],
    };
    cfg.tuning.draws = 10;
    cfg
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    fs::read(dir.join(file)).unwrap()
}

#[test]
fn grid_sizes_and_order() {
    assert_eq!(build_grid(&GridConfig::default()).len(), 54);
    let single = GridConfig {
        village_fractions: vec![0.5],
        response_rates: vec![0.65],
        xis: vec![1.2],
    };
    assert_eq!(build_grid(&single).len(), 1);
    let four = GridConfig {
        village_fractions: vec![0.25, 0.5],
        response_rates: vec![0.8],
        xis: vec![1.5, 1.0],
    };
    let g = build_grid(&four);
    let ids: Vec<&str> = g.iter().map(|s| s.scenario_id.as_str()).collect();
    assert_eq!(
        ids,
        [
            "f0.50_r0.80_x1.00",
            "f0.50_r0.80_x1.50",
            "f0.25_r0.80_x1.00",
            "f0.25_r0.80_x1.50"
        ]
    );
    assert!(g.iter().enumerate().all(|(i, s)| s.ordinal as usize == i));
}

#[test]
fn worker_count_does_not_change_results() {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let one = RunConfig {
        workers: 1,
        ..small_config()
    };
    let eight = RunConfig {
        workers: 8,
        ..small_config()
    };
    let ra = run_grid(&one, &ScenarioFilter::default(), a.path()).unwrap();
    let rb = run_grid(&eight, &ScenarioFilter::default(), b.path()).unwrap();
    assert_eq!((ra.aborted, rb.aborted), (0, 0));
    assert_eq!(ra.summaries.len(), 8);
    assert_eq!(
        read(a.path(), REPLICATES_FILE),
        read(b.path(), REPLICATES_FILE)
    );
    assert_eq!(read(a.path(), SUMMARY_FILE), read(b.path(), SUMMARY_FILE));
    assert_eq!(read(a.path(), TUNING_FILE), read(b.path(), TUNING_FILE));
}

#[test]
fn rerun_reuses_completed_scenarios_and_reproduces_outputs() {
    let dir = tempdir().unwrap();
    let cfg = small_config();
    let first = run_grid(&cfg, &ScenarioFilter::default(), dir.path()).unwrap();
    let replicates = read(dir.path(), REPLICATES_FILE);
    let summary = read(dir.path(), SUMMARY_FILE);
    assert_eq!(first.resumed, 0);

    let second = run_grid(&cfg, &ScenarioFilter::default(), dir.path()).unwrap();
    assert_eq!(second.resumed, 4);
    assert_eq!(read(dir.path(), REPLICATES_FILE), replicates);
    assert_eq!(read(dir.path(), SUMMARY_FILE), summary);
    assert_eq!(second.manifest.created_unix, first.manifest.created_unix);

    // A different seed invalidates the cache.
    let reseeded = RunConfig {
        master_seed: 99,
        ..cfg
    };
    let third = run_grid(&reseeded, &ScenarioFilter::default(), dir.path()).unwrap();
    assert_eq!(third.resumed, 0);
    assert_ne!(read(dir.path(), REPLICATES_FILE), replicates);
}

#[test]
fn interrupted_run_resumes_missing_scenarios() {
    let dir = tempdir().unwrap();
    let cfg = small_config();
    let only: ScenarioFilter = "fraction=0.5,xi=1.0".parse().unwrap();
    let partial = run_grid(&cfg, &only, dir.path()).unwrap();
    assert_eq!(partial.summaries.len(), 2);
    let manifest = Manifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.scenarios.len(), 1);

    let full = run_grid(&cfg, &ScenarioFilter::default(), dir.path()).unwrap();
    assert_eq!(full.resumed, 1);
    let fresh = tempdir().unwrap();
    run_grid(&cfg, &ScenarioFilter::default(), fresh.path()).unwrap();
    assert_eq!(
        read(dir.path(), REPLICATES_FILE),
        read(fresh.path(), REPLICATES_FILE)
    );
}

#[test]
fn filter_runs_exactly_one_cell() {
    let dir = tempdir().unwrap();
    let filter: ScenarioFilter = "fraction=0.25,rate=0.8,xi=1.5".parse().unwrap();
    let out = run_grid(&small_config(), &filter, dir.path()).unwrap();
    let ids: Vec<&str> = out
        .summaries
        .iter()
        .map(|s| s.scenario_id.as_str())
        .collect();
    assert_eq!(ids, ["f0.25_r0.80_x1.50", "f0.25_r0.80_x1.50"]);
    let text = String::from_utf8(read(dir.path(), REPLICATES_FILE)).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 10);
}

#[test]
fn unreachable_rate_aborts_only_that_scenario() {
    let dir = tempdir().unwrap();
    let mut cfg = small_config();
    cfg.grid.response_rates = vec![0.8, 0.995];
    cfg.tuning.bracket = [-3.0, 3.0];
    let out = run_grid(&cfg, &ScenarioFilter::default(), dir.path()).unwrap();
    assert_eq!(out.aborted, 4);
    assert_eq!(out.summaries.len(), 8);
    let aborted: Vec<_> = out
        .manifest
        .scenarios
        .iter()
        .filter(|s| s.state == ScenarioState::Aborted)
        .collect();
    assert_eq!(aborted.len(), 4);
    assert!(aborted
        .iter()
        .all(|s| s.response_rate == 0.995 && s.error.is_some()));
}

fn scenario(fraction: f64, gamma0: f64) -> Scenario {
    Scenario {
        ordinal: 0,
        scenario_id: Scenario::make_id(fraction, 0.5, 1.0),
        village_fraction: fraction,
        response_rate_target: 0.5,
        xi: 1.0,
        gamma0_tuned: gamma0,
    }
}

fn estimate(r: &ReplicateRecord) -> &anchorsim::metrics::Estimate {
    r.estimate.as_ref().unwrap()
}

#[test]
fn replicate_edge_cases() {
    let cfg = small_config();
    let census = Census::build(&cfg).unwrap();

    // Everyone attends and every village is sampled.
    let full = scenario(1.0, 60.0);
    let ctx = ReplicateContext::new(&cfg, &census, &full);
    let [cal, imp] = run_replicate(&ctx, 0).unwrap();
    assert!((estimate(&cal).p_hat - cal.p_true).abs() < 1e-10);
    assert!((estimate(&imp).p_hat - imp.p_true).abs() < 1e-8);
    assert_eq!(run_replicate(&ctx, 0).unwrap(), [cal, imp]);

    // Nobody attends.
    let none = scenario(0.5, -60.0);
    let ctx = ReplicateContext::new(&cfg, &census, &none);
    for r in run_replicate(&ctx, 3).unwrap() {
        assert_eq!(r.estimate, Err("empty sample".to_string()));
    }
}

#[test]
fn dumped_replicate_reestimates_identically() {
    let cfg = small_config();
    let census = Census::build(&cfg).unwrap();
    let s = scenario(0.5, 1.0);
    let ctx = ReplicateContext::new(&cfg, &census, &s);
    let draw = draw_replicate(&ctx, 4).unwrap();
    let data = DataSet {
        population: census.population.clone(),
        y1: draw.followup.y1,
        attended: draw.attended,
        sample: draw.sample,
    };
    let dir = tempdir().unwrap();
    let path = dir.path().join("replicate.csv");
    data.write(&path).unwrap();
    let back = DataSet::read(&path).unwrap();
    assert_eq!(back.p_true(), data.p_true());
    let records = run_replicate(&ctx, 4).unwrap();
    for ((_, result), rec) in back.estimate(&cfg.estimation).into_iter().zip(&records) {
        let r = result.unwrap();
        assert_eq!(r.p_hat, estimate(rec).p_hat);
        assert_eq!(r.se, estimate(rec).se);
    }
}

#[test]
fn population_redraw_changes_the_census_per_replicate() {
    let dir = tempdir().unwrap();
    let mut cfg = small_config();
    cfg.population_redraw_per_replicate = true;
    let filter: ScenarioFilter = "fraction=0.5,xi=1.0".parse().unwrap();
    let out = run_grid(&cfg, &filter, dir.path()).unwrap();
    assert_eq!(out.aborted, 0);
    let text = String::from_utf8(read(dir.path(), REPLICATES_FILE)).unwrap();
    let truths: std::collections::BTreeSet<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(6).unwrap())
        .collect();
    assert_eq!(truths.len(), 10);
}

#[test]
fn shipped_configurations_load() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let default = RunConfig::load(&root.join("default.toml")).unwrap();
    assert_eq!(default, RunConfig::default());
    let desk = RunConfig::load(&root.join("desk.toml")).unwrap();
    assert_eq!(desk.n_rep, 500);
    assert_ne!(desk.results_hash(), default.results_hash());
}
