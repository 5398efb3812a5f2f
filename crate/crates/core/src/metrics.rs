//! Performance measures over replicates, with Monte Carlo standard errors.

use serde::{Deserialize, Serialize};

use crate::estimators::{EstimateResult, Method};

/// Equivalence margins reported alongside coverage.
pub const EQUIVALENCE_MARGINS: [f64; 2] = [0.05, 0.075];

/// Failure rate above which a scenario is flagged.
pub const FAILURE_ALARM: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub p_hat: f64,
    pub se: f64,
    pub ci95: Interval,
    pub ci90: Interval,
}

impl From<&EstimateResult> for Estimate {
    fn from(r: &EstimateResult) -> Self {
        Estimate {
            p_hat: r.p_hat,
            se: r.se,
            ci95: Interval {
                lo: r.ci95.0,
                hi: r.ci95.1,
            },
            ci90: Interval {
                lo: r.ci90.0,
                hi: r.ci90.1,
            },
        }
    }
}

/// One method's outcome on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub scenario_id: String,
    pub rep_index: u32,
    pub method: Method,
    pub p_true: f64,
    /// `Err` carries the failure reason.
    pub estimate: Result<Estimate, String>,
}

impl ReplicateRecord {
    pub fn failed(&self) -> bool {
        self.estimate.is_err()
    }

    pub fn covered(&self) -> Option<bool> {
        self.estimate
            .as_ref()
            .ok()
            .map(|e| e.ci95.contains(self.p_true))
    }

    /// 90% interval lies strictly inside (p_true − δ, p_true + δ).
    pub fn equivalent(&self, delta: f64) -> Option<bool> {
        self.estimate
            .as_ref()
            .ok()
            .map(|e| self.p_true - delta < e.ci90.lo && e.ci90.hi < self.p_true + delta)
    }
}

/// Mean and Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub value: f64,
    pub mcse: f64,
}

/// Mean error `p̂ − p` with MCSE `sqrt(Σ(d − d̄)² / (n(n − 1)))`.
/// `None` with fewer than two successful replicates.
pub fn bias(records: &[ReplicateRecord]) -> Option<Measure> {
    let d: Vec<f64> = records
        .iter()
        .filter_map(|r| r.estimate.as_ref().ok().map(|e| e.p_hat - r.p_true))
        .collect();
    let n = d.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let ss: f64 = d.iter().map(|x| (x - mean).powi(2)).sum();
    Some(Measure {
        value: mean,
        mcse: (ss / (nf * (nf - 1.0))).sqrt(),
    })
}

/// Binomial MCSE `sqrt(c(1 − c)/n)` of a proportion.
pub fn proportion_mcse(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn proportion(flags: impl Iterator<Item = Option<bool>>) -> Option<Measure> {
    let (mut hits, mut n) = (0usize, 0usize);
    for f in flags.flatten() {
        n += 1;
        hits += usize::from(f);
    }
    if n == 0 {
        return None;
    }
    let p = hits as f64 / n as f64;
    Some(Measure {
        value: p,
        mcse: proportion_mcse(p, n),
    })
}

/// Share of successful replicates whose 95% interval covers `p_true`.
pub fn coverage(records: &[ReplicateRecord]) -> Option<Measure> {
    proportion(records.iter().map(ReplicateRecord::covered))
}

/// TOST equivalence share at margin `delta`.
pub fn equivalence(records: &[ReplicateRecord], delta: f64) -> Option<Measure> {
    assert!(delta > 0.0, "equivalence margin must be positive");
    proportion(records.iter().map(|r| r.equivalent(delta)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub fraction: f64,
    pub response_rate: f64,
    pub xi: f64,
    pub method: Method,
    pub n_rep: usize,
    pub n_rep_effective: usize,
    pub failure_count: usize,
    pub bias: Option<f64>,
    pub bias_mcse: Option<f64>,
    pub coverage: Option<f64>,
    pub coverage_mcse: Option<f64>,
    pub equiv05: Option<f64>,
    pub equiv05_mcse: Option<f64>,
    pub equiv075: Option<f64>,
    pub equiv075_mcse: Option<f64>,
    pub mean_se: Option<f64>,
}

impl ScenarioSummary {
    pub fn failure_rate(&self) -> f64 {
        if self.n_rep == 0 {
            0.0
        } else {
            self.failure_count as f64 / self.n_rep as f64
        }
    }
}

/// Scenario coordinates attached to a summary row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub fraction: f64,
    pub response_rate: f64,
    pub xi: f64,
}

/// Summarizes one scenario × method group.
pub fn summarize(
    scenario_id: &str,
    cell: Cell,
    method: Method,
    records: &[ReplicateRecord],
) -> ScenarioSummary {
    debug_assert!(records
        .iter()
        .all(|r| r.method == method && r.scenario_id == scenario_id));
    let failure_count = records.iter().filter(|r| r.failed()).count();
    let ok: Vec<f64> = records
        .iter()
        .filter_map(|r| r.estimate.as_ref().ok().map(|e| e.se))
        .collect();
    let b = bias(records);
    let c = coverage(records);
    let e05 = equivalence(records, EQUIVALENCE_MARGINS[0]);
    let e075 = equivalence(records, EQUIVALENCE_MARGINS[1]);
    ScenarioSummary {
        scenario_id: scenario_id.to_string(),
        fraction: cell.fraction,
        response_rate: cell.response_rate,
        xi: cell.xi,
        method,
        n_rep: records.len(),
        n_rep_effective: records.len() - failure_count,
        failure_count,
        bias: b.map(|m| m.value),
        bias_mcse: b.map(|m| m.mcse),
        coverage: c.map(|m| m.value),
        coverage_mcse: c.map(|m| m.mcse),
        equiv05: e05.map(|m| m.value),
        equiv05_mcse: e05.map(|m| m.mcse),
        equiv075: e075.map(|m| m.value),
        equiv075_mcse: e075.map(|m| m.mcse),
        mean_se: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
    }
}

/// Rounds to `decimals` places, ties to even, and clears negative zero.
pub fn round_half_even(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let r = (x * scale).round_ties_even() / scale;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Three-decimal rendering used for bias and coverage.
pub fn render_fixed(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{:.3}", round_half_even(v, 3)),
        None => "NA".to_string(),
    }
}

/// Rendering for equivalence proportions: values at or above 0.9995
/// print as ">0.999".
pub fn render_equivalence(x: Option<f64>) -> String {
    match x {
        Some(v) if v >= 0.9995 => ">0.999".to_string(),
        other => render_fixed(other),
    }
}
