use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgm::{OutcomeCoefficients, SelectionCoefficients, TuningConfig};
use crate::error::{Error, Result};
use crate::estimators::EstimatorOptions;
use crate::population::PopulationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub coefficients: OutcomeCoefficients,
    /// Expected follow-up prevalence to tune the intercept to. When absent
    /// the configured `beta0` is used as is.
    pub prevalence_target: Option<f64>,
    pub tuning_draws: usize,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        OutcomeConfig {
            coefficients: OutcomeCoefficients::default(),
            prevalence_target: None,
            tuning_draws: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub village_fractions: Vec<f64>,
    pub response_rates: Vec<f64>,
    pub xis: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            village_fractions: vec![0.75, 0.50, 0.25],
            response_rates: vec![0.80, 0.65, 0.50],
            xis: vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5],
        }
    }
}

/// Everything that defines a simulation run. Serialized as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub n_rep: u32,
    /// Worker threads; 0 uses all available cores.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub population_redraw_per_replicate: bool,
    pub population: PopulationConfig,
    pub outcome: OutcomeConfig,
    /// Attendance model. `gamma0` and `xi` are replaced per scenario.
    pub selection: SelectionCoefficients,
    pub grid: GridConfig,
    pub tuning: TuningConfig,
    pub estimation: EstimatorOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 20_240_601,
            n_rep: 1000,
            workers: 0,
            output_dir: PathBuf::from("results"),
            population_redraw_per_replicate: false,
            population: PopulationConfig::default(),
            outcome: OutcomeConfig::default(),
            selection: SelectionCoefficients::default(),
            grid: GridConfig::default(),
            tuning: TuningConfig::default(),
            estimation: EstimatorOptions::default(),
        }
    }
}

fn check_values(name: &str, values: &[f64], ok: impl Fn(f64) -> bool) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("grid.{name} must not be empty")));
    }
    if let Some(v) = values.iter().find(|&&v| !ok(v)) {
        return Err(Error::Config(format!(
            "grid.{name} contains invalid value {v}"
        )));
    }
    Ok(())
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rep == 0 {
            return Err(Error::Config("n_rep must be at least 1".into()));
        }
        self.population.validate()?;
        self.outcome.coefficients.validate()?;
        if let Some(t) = self.outcome.prevalence_target {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(
                    "outcome.prevalence_target must lie in (0, 1)".into(),
                ));
            }
        }
        if self.outcome.tuning_draws == 0 {
            return Err(Error::Config(
                "outcome.tuning_draws must be positive".into(),
            ));
        }
        self.selection.validate()?;
        self.tuning.validate()?;
        check_values("village_fractions", &self.grid.village_fractions, |v| {
            v > 0.0 && v <= 1.0
        })?;
        check_values("response_rates", &self.grid.response_rates, |v| {
            v > 0.0 && v < 1.0
        })?;
        check_values("xis", &self.grid.xis, |v| v > 0.0 && v.is_finite())?;
        let l = &self.estimation.logistic;
        if l.max_iterations == 0 || !(l.tolerance > 0.0) || !(l.separation_bound > 0.0) {
            return Err(Error::Config(
                "estimation.logistic settings must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Hash of every setting that affects simulated results. Worker count
    /// and output location are excluded.
    pub fn results_hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.output_dir = PathBuf::new();
        match self.estimation.sandwich_factor_override {
            Some(factor) => sha256_json(&(c, factor)),
            None => sha256_json(&c),
        }
    }

    /// Hash of the settings the tuned intercepts depend on.
    pub fn tuning_hash(&self) -> String {
        sha256_json(&(
            self.master_seed,
            &self.population,
            &self.outcome,
            &self.selection,
            &self.tuning,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = RunConfig::from_toml_str("n_rep = 20\n[grid]\nxis = [1.5]\n").unwrap();
        assert_eq!(cfg.n_rep, 20);
        assert_eq!(cfg.grid.xis, vec![1.5]);
        assert_eq!(cfg.grid.village_fractions.len(), 3);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml_str("nrep = 5").is_err());
        assert!(RunConfig::from_toml_str("n_rep = 0")
            .unwrap_err()
            .is_config());
        assert!(RunConfig::from_toml_str("[grid]\nresponse_rates = [1.2]")
            .unwrap_err()
            .is_config());
    }

    #[test]
    fn hashes_ignore_workers_but_not_seed() {
        let a = RunConfig::default();
        let b = RunConfig {
            workers: 8,
            ..a.clone()
        };
        let c = RunConfig {
            master_seed: 7,
            ..a.clone()
        };
        assert_eq!(a.results_hash(), b.results_hash());
        assert_ne!(a.results_hash(), c.results_hash());
        let d = RunConfig {
            n_rep: 3,
            ..a.clone()
        };
        assert_eq!(a.tuning_hash(), d.tuning_hash());
    }
}
