use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::census::TuningEntry;
use crate::dgm::Scenario;
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::metrics::{Estimate, Interval, ReplicateRecord, ScenarioSummary, EQUIVALENCE_MARGINS};

pub const REPLICATES_FILE: &str = "replicates.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TUNING_FILE: &str = "tuning.json";
pub const PARTS_DIR: &str = "parts";

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// One line of `replicates.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub scenario_id: String,
    pub fraction: f64,
    pub response_rate: f64,
    pub xi: f64,
    pub rep: u32,
    pub method: Method,
    pub p_true: f64,
    pub p_hat: Option<f64>,
    pub se: Option<f64>,
    pub ci95_lo: Option<f64>,
    pub ci95_hi: Option<f64>,
    pub ci90_lo: Option<f64>,
    pub ci90_hi: Option<f64>,
    pub covered: Option<bool>,
    pub equiv05: Option<bool>,
    pub equiv075: Option<bool>,
    pub failed: bool,
    pub reason: String,
}

impl ReplicateRow {
    pub fn new(scenario: &Scenario, r: &ReplicateRecord) -> Self {
        let e = r.estimate.as_ref().ok();
        ReplicateRow {
            scenario_id: r.scenario_id.clone(),
            fraction: scenario.village_fraction,
            response_rate: scenario.response_rate_target,
            xi: scenario.xi,
            rep: r.rep_index,
            method: r.method,
            p_true: r.p_true,
            p_hat: e.map(|e| e.p_hat),
            se: e.map(|e| e.se),
            ci95_lo: e.map(|e| e.ci95.lo),
            ci95_hi: e.map(|e| e.ci95.hi),
            ci90_lo: e.map(|e| e.ci90.lo),
            ci90_hi: e.map(|e| e.ci90.hi),
            covered: r.covered(),
            equiv05: r.equivalent(EQUIVALENCE_MARGINS[0]),
            equiv075: r.equivalent(EQUIVALENCE_MARGINS[1]),
            failed: r.failed(),
            reason: r.estimate.as_ref().err().cloned().unwrap_or_default(),
        }
    }

    pub fn to_record(&self) -> Result<ReplicateRecord> {
        let estimate = if self.failed {
            Err(self.reason.clone())
        } else {
            match (
                self.p_hat,
                self.se,
                self.ci95_lo,
                self.ci95_hi,
                self.ci90_lo,
                self.ci90_hi,
            ) {
                (Some(p_hat), Some(se), Some(a), Some(b), Some(c), Some(d)) => Ok(Estimate {
                    p_hat,
                    se,
                    ci95: Interval { lo: a, hi: b },
                    ci90: Interval { lo: c, hi: d },
                }),
                _ => {
                    return Err(Error::Input(format!(
                        "replicate {} of {} is not failed but lacks estimate fields",
                        self.rep, self.scenario_id
                    )))
                }
            }
        };
        Ok(ReplicateRecord {
            scenario_id: self.scenario_id.clone(),
            rep_index: self.rep,
            method: self.method,
            p_true: self.p_true,
            estimate,
        })
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Input(e.to_string()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn read_replicates(path: &Path) -> Result<Vec<ReplicateRow>> {
    read_csv(path)
}

pub fn read_summary(path: &Path) -> Result<Vec<ScenarioSummary>> {
    read_csv(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioState {
    Pending,
    Complete,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioStatus {
    pub scenario_id: String,
    pub ordinal: u32,
    pub fraction: f64,
    pub response_rate: f64,
    pub xi: f64,
    pub gamma0: Option<f64>,
    pub state: ScenarioState,
    pub failures: usize,
    pub error: Option<String>,
}

/// Run metadata written before replicates start and updated per scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub n_rep: u32,
    pub created_unix: u64,
    pub updated_unix: u64,
    pub n_villages: usize,
    pub n_children: usize,
    pub baseline_intercept: f64,
    pub outcome_intercept: f64,
    pub tuning: Vec<TuningEntry>,
    pub scenarios: Vec<ScenarioStatus>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.updated_unix = unix_now();
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn status_mut(&mut self, scenario_id: &str) -> Option<&mut ScenarioStatus> {
        self.scenarios
            .iter_mut()
            .find(|s| s.scenario_id == scenario_id)
    }

    pub fn is_complete(&self, scenario_id: &str) -> bool {
        self.scenarios
            .iter()
            .any(|s| s.scenario_id == scenario_id && s.state == ScenarioState::Complete)
    }
}
