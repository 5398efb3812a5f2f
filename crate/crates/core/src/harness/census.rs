use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::dgm::{tune_beta0, OutcomeCoefficients, SelectionTuner, TunedIntercept};
use crate::error::{Error, Result};
use crate::estimators::AuxiliaryMatrix;
use crate::population::{build_census, Population};
use crate::rng::Streams;

/// The fixed finite population of a run with its fitted models.
#[derive(Debug, Clone)]
pub struct Census {
    pub population: Population,
    pub auxiliaries: AuxiliaryMatrix,
    /// Baseline vaccination model, intercept tuned to the baseline rate.
    pub baseline: OutcomeCoefficients,
    /// Follow-up vaccination model used for every replicate.
    pub outcome: OutcomeCoefficients,
    pub outcome_tuning: Option<TunedIntercept>,
}

impl Census {
    pub fn build(cfg: &RunConfig) -> Result<Census> {
        let (population, baseline) = build_census(&cfg.population, &cfg.outcome.coefficients)?;
        let mut outcome = cfg.outcome.coefficients.clone();
        let outcome_tuning = match cfg.outcome.prevalence_target {
            Some(target) => {
                let streams = Streams::new(cfg.master_seed);
                let t = tune_beta0(
                    &population,
                    &outcome,
                    target,
                    cfg.outcome.tuning_draws,
                    &streams,
                )?;
                outcome.beta0 = t.value;
                Some(t)
            }
            None => None,
        };
        log::info!(
            "census: {} villages, {} children, baseline rate {:.4}, follow-up intercept {:.4}",
            population.n_villages(),
            population.total_children(),
            population.baseline_rate(),
            outcome.beta0
        );
        let auxiliaries = AuxiliaryMatrix::standard(&population);
        Ok(Census {
            population,
            auxiliaries,
            baseline,
            outcome,
            outcome_tuning,
        })
    }
}

/// Tuned selection intercept for one (response rate, ξ) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningEntry {
    pub key: String,
    pub response_rate: f64,
    pub xi: f64,
    pub gamma0: f64,
    pub achieved_rate: f64,
    pub iterations: usize,
}

pub fn tuning_key(rate: f64, xi: f64) -> String {
    format!("r{rate:.2}_x{xi:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningTable {
    pub config_hash: String,
    pub entries: Vec<TuningEntry>,
}

impl TuningTable {
    pub fn get(&self, rate: f64, xi: f64) -> Option<&TuningEntry> {
        let key = tuning_key(rate, xi);
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn read(path: &Path) -> Result<TuningTable> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        super::output::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Result of bringing the tuning table up to date.
#[derive(Debug)]
pub struct TuningOutcome {
    pub table: TuningTable,
    /// Pairs that had to be simulated (zero on a full cache hit).
    pub tuned: usize,
    pub failures: Vec<(String, Error)>,
}

/// Tunes γ₀ for every (rate, ξ) pair not already in `cached`. A cache is
/// reused only if its hash matches the current configuration.
pub fn tune_pairs(
    cfg: &RunConfig,
    census: &Census,
    pairs: &[(f64, f64)],
    cached: Option<TuningTable>,
) -> Result<TuningOutcome> {
    let hash = cfg.tuning_hash();
    let mut table = match cached {
        Some(t) if t.config_hash == hash => t,
        _ => TuningTable {
            config_hash: hash,
            entries: Vec::new(),
        },
    };
    let missing: Vec<(f64, f64)> = pairs
        .iter()
        .copied()
        .filter(|&(r, x)| table.get(r, x).is_none())
        .collect();
    let mut failures = Vec::new();
    if !missing.is_empty() {
        let streams = Streams::new(cfg.master_seed);
        let tuner = SelectionTuner::new(
            &census.population,
            &census.outcome,
            &cfg.selection,
            &cfg.tuning,
            &streams,
        )?;
        for &(rate, xi) in &missing {
            let key = tuning_key(rate, xi);
            match tuner.tune(rate, xi) {
                Ok(t) => {
                    log::info!(
                        "tuned {key}: gamma0 = {:.4}, rate {:.4}",
                        t.value,
                        t.achieved_rate
                    );
                    table.entries.push(TuningEntry {
                        key,
                        response_rate: rate,
                        xi,
                        gamma0: t.value,
                        achieved_rate: t.achieved_rate,
                        iterations: t.iterations,
                    });
                }
                Err(e) => {
                    log::error!("tuning {key} failed: {e}");
                    failures.push((key, e));
                }
            }
        }
        table.entries.sort_by(|a, b| {
            b.response_rate
                .total_cmp(&a.response_rate)
                .then(a.xi.total_cmp(&b.xi))
        });
    }
    Ok(TuningOutcome {
        table,
        tuned: missing.len(),
        failures,
    })
}
