//! Publication tables and plot-ready CSVs from a finished run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::estimators::Method;
use crate::harness::output::{
    read_replicates, read_summary, write_atomic, write_csv, REPLICATES_FILE, SUMMARY_FILE,
};
use crate::harness::ReplicateRow;
use crate::metrics::{render_equivalence, render_fixed, ScenarioSummary, EQUIVALENCE_MARGINS};

pub const TABLES_FILE: &str = "tables.md";
pub const BIAS_FILE: &str = "bias_by_scenario.csv";
pub const COVERAGE_FILE: &str = "coverage_by_scenario.csv";
pub const ZIPPER_DIR: &str = "zipper";
pub const TOST_DIR: &str = "tost";

/// Table order: ξ ascending, then fraction and rate descending, then
/// Calibrated before Logistic Regression.
pub fn sort_for_tables(rows: &mut [ScenarioSummary]) {
    rows.sort_by(|a, b| {
        a.xi.total_cmp(&b.xi)
            .then(b.fraction.total_cmp(&a.fraction))
            .then(b.response_rate.total_cmp(&a.response_rate))
            .then(a.method.cmp(&b.method))
    });
}

/// Markdown tables, one per ξ, in publication column order.
pub fn render_tables(summaries: &[ScenarioSummary]) -> String {
    let mut rows = summaries.to_vec();
    sort_for_tables(&mut rows);
    let mut out = String::from("# Performance by scenario\n");
    let mut current_xi: Option<f64> = None;
    let mut last_cell: Option<(f64, f64)> = None;
    for s in &rows {
        if current_xi != Some(s.xi) {
            current_xi = Some(s.xi);
            last_cell = None;
            let _ = write!(
                out,
                "\n## Odds ratio for selection bias ξ = {:.1}\n\n\
                 | Village Sampling Proportion | Participation Rate | Method | Bias | Coverage (95% CI) | TOST Equivalence ±5% | TOST Equivalence ±7.5% |\n\
                 |---|---|---|---|---|---|---|\n",
                s.xi
            );
        }
        let fraction = if last_cell.map(|c| c.0) == Some(s.fraction) {
            String::new()
        } else {
            format!("{:.2}", s.fraction)
        };
        let rate = if last_cell == Some((s.fraction, s.response_rate)) {
            String::new()
        } else {
            format!("{:.2}", s.response_rate)
        };
        last_cell = Some((s.fraction, s.response_rate));
        let _ = writeln!(
            out,
            "| {fraction} | {rate} | {} | {} | {} | {} | {} |",
            s.method.label(),
            render_fixed(s.bias),
            render_fixed(s.coverage),
            render_equivalence(s.equiv05),
            render_equivalence(s.equiv075),
        );
    }
    let failed: Vec<&ScenarioSummary> = rows.iter().filter(|s| s.failure_count > 0).collect();
    if !failed.is_empty() {
        out.push_str("\n## Estimation failures\n\n| Scenario | Method | Failed | Replicates |\n|---|---|---|---|\n");
        for s in failed {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.scenario_id,
                s.method.label(),
                s.failure_count,
                s.n_rep
            );
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct MetricRow<'a> {
    scenario_id: &'a str,
    fraction: f64,
    response_rate: f64,
    xi: f64,
    method: Method,
    estimate: Option<f64>,
    mcse: Option<f64>,
}

fn metric_rows<'a>(
    rows: &'a [ScenarioSummary],
    pick: impl Fn(&ScenarioSummary) -> (Option<f64>, Option<f64>),
) -> Vec<MetricRow<'a>> {
    rows.iter()
        .map(|s| {
            let (estimate, mcse) = pick(s);
            MetricRow {
                scenario_id: &s.scenario_id,
                fraction: s.fraction,
                response_rate: s.response_rate,
                xi: s.xi,
                method: s.method,
                estimate,
                mcse,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZipperRow {
    pub rank: usize,
    pub rep: u32,
    pub p_true: f64,
    pub p_hat: f64,
    pub error: f64,
    pub lo: f64,
    pub hi: f64,
    pub width: f64,
    pub covered: bool,
}

/// 95% intervals centred on the truth, thinnest first.
pub fn zipper_rows(rows: &[&ReplicateRow]) -> Vec<ZipperRow> {
    let mut out: Vec<ZipperRow> = rows
        .iter()
        .filter_map(|r| {
            let (p_hat, lo, hi) = (r.p_hat?, r.ci95_lo?, r.ci95_hi?);
            Some(ZipperRow {
                rank: 0,
                rep: r.rep,
                p_true: r.p_true,
                p_hat,
                error: p_hat - r.p_true,
                lo: lo - r.p_true,
                hi: hi - r.p_true,
                width: hi - lo,
                covered: lo <= r.p_true && r.p_true <= hi,
            })
        })
        .collect();
    out.sort_by(|a, b| a.width.total_cmp(&b.width).then(a.rep.cmp(&b.rep)));
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TostRow {
    pub rank: usize,
    pub rep: u32,
    pub error: f64,
    pub lo: f64,
    pub hi: f64,
    pub delta: f64,
    pub within: bool,
}

/// 90% intervals centred on the truth, ordered by signed error.
pub fn tost_rows(rows: &[&ReplicateRow], delta: f64) -> Vec<TostRow> {
    let mut out: Vec<TostRow> = rows
        .iter()
        .filter_map(|r| {
            let (p_hat, lo, hi) = (r.p_hat?, r.ci90_lo? - r.p_true, r.ci90_hi? - r.p_true);
            Some(TostRow {
                rank: 0,
                rep: r.rep,
                error: p_hat - r.p_true,
                lo,
                hi,
                delta,
                within: -delta < lo && hi < delta,
            })
        })
        .collect();
    out.sort_by(|a, b| a.error.total_cmp(&b.error).then(a.rep.cmp(&b.rep)));
    for (i, r) in out.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    out
}

fn margin_tag(delta: f64) -> String {
    format!("d{:03}", (delta * 1000.0).round() as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub tables: PathBuf,
    pub bias: PathBuf,
    pub coverage: PathBuf,
    pub zipper: Vec<PathBuf>,
    pub tost: Vec<PathBuf>,
}

/// Reads `summary.csv` and `replicates.csv` from `results_dir` and writes
/// every report artifact under `out_dir`.
pub fn write_report(results_dir: &Path, out_dir: &Path) -> Result<ReportFiles> {
    let mut summaries = read_summary(&results_dir.join(SUMMARY_FILE))?;
    sort_for_tables(&mut summaries);
    let replicates = read_replicates(&results_dir.join(REPLICATES_FILE))?;

    let tables = out_dir.join(TABLES_FILE);
    write_atomic(&tables, render_tables(&summaries).as_bytes())?;
    let bias = out_dir.join(BIAS_FILE);
    write_csv(&bias, &metric_rows(&summaries, |s| (s.bias, s.bias_mcse)))?;
    let coverage = out_dir.join(COVERAGE_FILE);
    write_csv(
        &coverage,
        &metric_rows(&summaries, |s| (s.coverage, s.coverage_mcse)),
    )?;

    let mut groups: BTreeMap<(String, Method), Vec<&ReplicateRow>> = BTreeMap::new();
    for r in &replicates {
        groups
            .entry((r.scenario_id.clone(), r.method))
            .or_default()
            .push(r);
    }
    let mut zipper = Vec::new();
    let mut tost = Vec::new();
    for ((scenario, method), rows) in &groups {
        let stem = format!("{scenario}_{}", method.as_str());
        let z = out_dir.join(ZIPPER_DIR).join(format!("{stem}.csv"));
        write_csv(&z, &zipper_rows(rows))?;
        zipper.push(z);
        for &delta in &EQUIVALENCE_MARGINS {
            let t = out_dir
                .join(TOST_DIR)
                .join(format!("{stem}_{}.csv", margin_tag(delta)));
            write_csv(&t, &tost_rows(rows, delta))?;
            tost.push(t);
        }
    }
    Ok(ReportFiles {
        tables,
        bias,
        coverage,
        zipper,
        tost,
    })
}
