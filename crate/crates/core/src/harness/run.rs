use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use super::census::{tune_pairs, Census, TuningTable};
use super::config::{GridConfig, RunConfig};
use super::output::{
    read_replicates, unix_now, write_csv, Manifest, ReplicateRow, ScenarioState, ScenarioStatus,
    MANIFEST_FILE, PARTS_DIR, REPLICATES_FILE, SUMMARY_FILE, TUNING_FILE,
};
use crate::dgm::{
    draw_sample, generate_attendance, generate_followup, villages_to_sample, Followup, Sample,
    Scenario, SelectionCoefficients,
};
use crate::error::{Error, Result};
use crate::estimators::{estimate, AuxiliaryMatrix, EstimatorOptions, Method};
use crate::metrics::{summarize, Cell, Estimate, ReplicateRecord, ScenarioSummary, FAILURE_ALARM};
use crate::population::{generate_baseline, synthesize_population, Population};
use crate::rng::{Role, Streams};

const GRID_EPS: f64 = 1e-9;

fn sorted_unique(values: &[f64], descending: bool) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| {
        if descending {
            b.total_cmp(a)
        } else {
            a.total_cmp(b)
        }
    });
    v.dedup_by(|a, b| (*a - *b).abs() < GRID_EPS);
    v
}

/// Cartesian product of the grid, ordered by fraction (descending), then
/// response rate (descending), then ξ (ascending). Intercepts are unset
/// (NaN) until tuning.
pub fn build_grid(grid: &GridConfig) -> Vec<Scenario> {
    let mut out = Vec::new();
    for &f in &sorted_unique(&grid.village_fractions, true) {
        for &r in &sorted_unique(&grid.response_rates, true) {
            for &x in &sorted_unique(&grid.xis, false) {
                out.push(Scenario {
                    ordinal: out.len() as u32,
                    scenario_id: Scenario::make_id(f, r, x),
                    village_fraction: f,
                    response_rate_target: r,
                    xi: x,
                    gamma0_tuned: f64::NAN,
                });
            }
        }
    }
    out
}

/// Restricts a run to matching grid cells, e.g. `fraction=0.25,rate=0.5,xi=1.5`.
/// Omitted keys match everything.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScenarioFilter {
    pub fraction: Option<f64>,
    pub rate: Option<f64>,
    pub xi: Option<f64>,
}

impl ScenarioFilter {
    pub fn matches(&self, s: &Scenario) -> bool {
        let ok = |want: Option<f64>, have: f64| want.is_none_or(|w| (w - have).abs() < GRID_EPS);
        ok(self.fraction, s.village_fraction)
            && ok(self.rate, s.response_rate_target)
            && ok(self.xi, s.xi)
    }
}

impl FromStr for ScenarioFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut f = ScenarioFilter::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("scenario filter term '{part}' is not key=value"))
            })?;
            let v: f64 = v.trim().parse().map_err(|_| {
                Error::Config(format!("scenario filter value '{v}' is not a number"))
            })?;
            match k.trim() {
                "fraction" | "f" => f.fraction = Some(v),
                "rate" | "response_rate" | "r" => f.rate = Some(v),
                "xi" | "x" => f.xi = Some(v),
                other => {
                    return Err(Error::Config(format!(
                        "unknown scenario filter key '{other}'"
                    )))
                }
            }
        }
        Ok(f)
    }
}

/// Shared, read-only inputs for the replicates of one scenario.
pub struct ReplicateContext<'a> {
    pub census: &'a Census,
    pub scenario: &'a Scenario,
    pub selection: SelectionCoefficients,
    pub options: &'a EstimatorOptions,
    pub streams: Streams,
    /// Population settings for per-replicate redraws, when enabled.
    pub redraw: Option<&'a crate::population::PopulationConfig>,
}

impl<'a> ReplicateContext<'a> {
    pub fn new(cfg: &'a RunConfig, census: &'a Census, scenario: &'a Scenario) -> Self {
        let mut selection = cfg.selection.clone();
        selection.gamma0 = scenario.gamma0_tuned;
        selection.xi = scenario.xi;
        ReplicateContext {
            census,
            scenario,
            selection,
            options: &cfg.estimation,
            streams: Streams::new(cfg.master_seed),
            redraw: cfg
                .population_redraw_per_replicate
                .then_some(&cfg.population),
        }
    }
}

fn redraw_population(
    ctx: &ReplicateContext<'_>,
    cfg: &crate::population::PopulationConfig,
    rep: u32,
) -> Result<Population> {
    let ord = ctx.scenario.ordinal;
    let fresh = crate::population::PopulationConfig {
        rng_seed: ctx.streams.derive_seed(ord, rep, Role::PopulationRedraw),
        ..cfg.clone()
    };
    let pop = synthesize_population(&fresh)?;
    generate_baseline(
        &pop,
        &ctx.census.baseline,
        &mut ctx.streams.stream(ord, rep, Role::PopulationRedraw),
    )
}

/// Everything drawn for one replicate before estimation.
pub struct ReplicateDraw {
    /// Population and auxiliaries drawn for this replicate, when the
    /// population is redrawn per replicate.
    pub redrawn: Option<(Population, AuxiliaryMatrix)>,
    pub followup: Followup,
    pub attended: Vec<bool>,
    pub sample: Sample,
}

impl ReplicateDraw {
    pub fn population<'a>(
        &'a self,
        ctx: &'a ReplicateContext<'_>,
    ) -> (&'a Population, &'a AuxiliaryMatrix) {
        match &self.redrawn {
            Some((p, a)) => (p, a),
            None => (&ctx.census.population, &ctx.census.auxiliaries),
        }
    }
}

/// Draws the outcomes, attendance and village sample of one replicate.
pub fn draw_replicate(ctx: &ReplicateContext<'_>, rep: u32) -> Result<ReplicateDraw> {
    let ord = ctx.scenario.ordinal;
    let redrawn = match ctx.redraw {
        Some(cfg) => {
            let p = redraw_population(ctx, cfg, rep)?;
            let a = AuxiliaryMatrix::standard(&p);
            Some((p, a))
        }
        None => None,
    };
    let pop = redrawn.as_ref().map_or(&ctx.census.population, |r| &r.0);
    let followup = generate_followup(
        pop,
        &ctx.census.outcome,
        &mut ctx.streams.stream(ord, rep, Role::Outcomes),
    );
    let attended = generate_attendance(
        pop,
        &followup.y1,
        &ctx.selection,
        &mut ctx.streams.stream(ord, rep, Role::Attendance),
    );
    let sample = draw_sample(
        pop,
        &attended,
        ctx.scenario.village_fraction,
        &mut ctx.streams.stream(ord, rep, Role::VillageSampling),
    )?;
    Ok(ReplicateDraw {
        redrawn,
        followup,
        attended,
        sample,
    })
}

/// One replicate: a single outcome and attendance draw, one sample, and
/// both estimators applied to it. Estimation failures are recorded, not
/// returned as errors.
pub fn run_replicate(ctx: &ReplicateContext<'_>, rep: u32) -> Result<[ReplicateRecord; 2]> {
    let draw = draw_replicate(ctx, rep)?;
    let (pop, aux) = draw.population(ctx);
    let record = |method: Method| ReplicateRecord {
        scenario_id: ctx.scenario.scenario_id.clone(),
        rep_index: rep,
        method,
        p_true: draw.followup.p_true,
        estimate: estimate(
            method,
            pop,
            aux,
            &draw.sample,
            &draw.followup.y1,
            ctx.options,
        )
        .map(|r| Estimate::from(&r))
        .map_err(|e| e.reason().to_string()),
    };
    Ok([
        record(Method::Calibrated),
        record(Method::LogisticImputation),
    ])
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Runs `n_rep` replicates of one scenario. Records are ordered by
/// replicate then method, independent of the worker count.
pub fn run_scenario(
    ctx: &ReplicateContext<'_>,
    n_rep: u32,
    pool: &rayon::ThreadPool,
) -> Result<Vec<ReplicateRecord>> {
    let per_rep: Vec<[ReplicateRecord; 2]> = pool.install(|| {
        (0..n_rep)
            .into_par_iter()
            .map(|rep| run_replicate(ctx, rep))
            .collect::<Result<_>>()
    })?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Summary rows for one scenario, Calibrated first.
pub fn summarize_scenario(
    scenario: &Scenario,
    records: &[ReplicateRecord],
) -> Vec<ScenarioSummary> {
    let cell = Cell {
        fraction: scenario.village_fraction,
        response_rate: scenario.response_rate_target,
        xi: scenario.xi,
    };
    Method::ALL
        .iter()
        .map(|&m| {
            let rs: Vec<ReplicateRecord> =
                records.iter().filter(|r| r.method == m).cloned().collect();
            let s = summarize(&scenario.scenario_id, cell, m, &rs);
            if s.failure_rate() > FAILURE_ALARM {
                log::warn!(
                    "{} {}: {} of {} replicates failed",
                    scenario.scenario_id,
                    m.as_str(),
                    s.failure_count,
                    s.n_rep
                );
            }
            s
        })
        .collect()
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub summaries: Vec<ScenarioSummary>,
    /// Scenarios reused from an earlier run with the same configuration.
    pub resumed: usize,
    pub aborted: usize,
}

/// Census, tuning table, and selected scenarios paired with any tuning error.
pub type Prepared = (Census, TuningTable, Vec<(Scenario, Option<String>)>);

/// Builds the census, brings the tuning table up to date, and returns the
/// selected scenarios with their tuned intercepts. Scenarios whose tuning
/// failed carry the error instead.
pub fn prepare(cfg: &RunConfig, filter: &ScenarioFilter, output_dir: &Path) -> Result<Prepared> {
    cfg.validate()?;
    for &f in &cfg.grid.village_fractions {
        villages_to_sample(f, cfg.population.n_villages)?;
    }
    let scenarios: Vec<Scenario> = build_grid(&cfg.grid)
        .into_iter()
        .filter(|s| filter.matches(s))
        .collect();
    if scenarios.is_empty() {
        return Err(Error::Config("scenario filter matches no grid cell".into()));
    }
    let census = Census::build(cfg)?;
    let tuning_path = output_dir.join(TUNING_FILE);
    let cached = tuning_path
        .exists()
        .then(|| TuningTable::read(&tuning_path))
        .transpose()?;
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for s in &scenarios {
        let p = (s.response_rate_target, s.xi);
        if !pairs.contains(&p) {
            pairs.push(p);
        }
    }
    let outcome = tune_pairs(cfg, &census, &pairs, cached)?;
    if outcome.tuned > 0 {
        outcome.table.write(&tuning_path)?;
    } else {
        log::info!("tuning cache hit for {} pairs", pairs.len());
    }
    let scenarios = scenarios
        .into_iter()
        .map(|mut s| {
            let key = super::census::tuning_key(s.response_rate_target, s.xi);
            match outcome.table.get(s.response_rate_target, s.xi) {
                Some(e) => {
                    s.gamma0_tuned = e.gamma0;
                    (s, None)
                }
                None => {
                    let err = outcome
                        .failures
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, e)| e.to_string())
                        .unwrap_or_else(|| "selection intercept not tuned".into());
                    (s, Some(err))
                }
            }
        })
        .collect();
    Ok((census, outcome.table, scenarios))
}

fn part_path(output_dir: &Path, scenario_id: &str) -> std::path::PathBuf {
    output_dir
        .join(PARTS_DIR)
        .join(format!("{scenario_id}.csv"))
}

/// Full simulation: tuning, every selected scenario, and the combined
/// `replicates.csv`, `summary.csv` and `manifest.json` under `output_dir`.
/// Completed scenarios from an earlier run with the same configuration
/// are reused.
pub fn run_grid(cfg: &RunConfig, filter: &ScenarioFilter, output_dir: &Path) -> Result<RunOutcome> {
    let (census, table, scenarios) = prepare(cfg, filter, output_dir)?;
    let hash = cfg.results_hash();
    let manifest_path = output_dir.join(MANIFEST_FILE);
    let previous = manifest_path
        .exists()
        .then(|| Manifest::read(&manifest_path).ok())
        .flatten()
        .filter(|m| m.config_hash == hash);
    let now = unix_now();
    let mut manifest = Manifest {
        config_hash: hash,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: cfg.master_seed,
        n_rep: cfg.n_rep,
        created_unix: previous.as_ref().map_or(now, |m| m.created_unix),
        updated_unix: now,
        n_villages: census.population.n_villages(),
        n_children: census.population.total_children(),
        baseline_intercept: census.baseline.beta0,
        outcome_intercept: census.outcome.beta0,
        tuning: table.entries.clone(),
        scenarios: previous
            .as_ref()
            .map(|m| m.scenarios.clone())
            .unwrap_or_default(),
    };
    for (s, err) in &scenarios {
        let done = previous
            .as_ref()
            .is_some_and(|m| m.is_complete(&s.scenario_id))
            && part_path(output_dir, &s.scenario_id).exists();
        let status = ScenarioStatus {
            scenario_id: s.scenario_id.clone(),
            ordinal: s.ordinal,
            fraction: s.village_fraction,
            response_rate: s.response_rate_target,
            xi: s.xi,
            gamma0: s.gamma0_tuned.is_finite().then_some(s.gamma0_tuned),
            state: if err.is_some() {
                ScenarioState::Aborted
            } else if done {
                ScenarioState::Complete
            } else {
                ScenarioState::Pending
            },
            failures: 0,
            error: err.clone(),
        };
        match manifest.status_mut(&s.scenario_id) {
            Some(existing) => {
                let failures = existing.failures;
                *existing = status;
                if done {
                    existing.failures = failures;
                }
            }
            None => manifest.scenarios.push(status),
        }
    }
    manifest.scenarios.sort_by_key(|s| s.ordinal);
    manifest.write(&manifest_path)?;

    let pool = thread_pool(cfg.workers)?;
    let mut rows: Vec<ReplicateRow> = Vec::new();
    let mut summaries = Vec::new();
    let (mut resumed, mut aborted) = (0, 0);
    for (scenario, err) in &scenarios {
        if err.is_some() {
            aborted += 1;
            continue;
        }
        let part = part_path(output_dir, &scenario.scenario_id);
        let records = if manifest.is_complete(&scenario.scenario_id) {
            log::info!("{}: reusing completed results", scenario.scenario_id);
            resumed += 1;
            read_replicates(&part)?
                .iter()
                .map(ReplicateRow::to_record)
                .collect::<Result<Vec<_>>>()?
        } else {
            log::info!(
                "{}: running {} replicates (gamma0 {:.4})",
                scenario.scenario_id,
                cfg.n_rep,
                scenario.gamma0_tuned
            );
            let ctx = ReplicateContext::new(cfg, &census, scenario);
            let records = match run_scenario(&ctx, cfg.n_rep, &pool) {
                Ok(r) => r,
                Err(e) => {
                    log::error!("{}: aborted: {e}", scenario.scenario_id);
                    if let Some(st) = manifest.status_mut(&scenario.scenario_id) {
                        st.state = ScenarioState::Aborted;
                        st.error = Some(e.to_string());
                    }
                    manifest.write(&manifest_path)?;
                    aborted += 1;
                    continue;
                }
            };
            let part_rows: Vec<ReplicateRow> = records
                .iter()
                .map(|r| ReplicateRow::new(scenario, r))
                .collect();
            write_csv(&part, &part_rows)?;
            if let Some(st) = manifest.status_mut(&scenario.scenario_id) {
                st.state = ScenarioState::Complete;
                st.failures = records.iter().filter(|r| r.failed()).count();
            }
            manifest.write(&manifest_path)?;
            records
        };
        rows.extend(records.iter().map(|r| ReplicateRow::new(scenario, r)));
        summaries.extend(summarize_scenario(scenario, &records));
    }
    write_csv(&output_dir.join(REPLICATES_FILE), &rows)?;
    write_csv(&output_dir.join(SUMMARY_FILE), &summaries)?;
    manifest.write(&manifest_path)?;
    Ok(RunOutcome {
        manifest,
        summaries,
        resumed,
        aborted,
    })
}
