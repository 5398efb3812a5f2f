//! Self-checks of the estimators against independent reference
//! computations.

mod data;
pub mod oracles;

use std::fmt;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};
use rayon::prelude::*;

pub use data::{DataRow, DataSet};

use crate::dgm::{draw_sample, expit, generate_followup, OutcomeCoefficients, Sample};
use crate::error::Result;
use crate::estimators::{
    calibrate_weights, estimate_calibrated, estimate_imputation, fit_logistic, imputation_estimate,
    imputation_gradient, Auxiliary, AuxiliaryMatrix, Design, EstimatorOptions, LogisticConfig,
};
use crate::population::{build_census, Child, Population, PopulationConfig, Village};
use crate::rng::{Role, Streams};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<24} {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateOptions {
    pub seed: u64,
    /// Replaces the sandwich small-sample factor in the imputation
    /// variance, to confirm the Monte Carlo check detects a broken SE.
    pub sandwich_factor: Option<f64>,
    pub kkt_instances: u32,
    pub calibration_redraws: u32,
    pub imputation_redraws: u32,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            seed: 7,
            sandwich_factor: None,
            kkt_instances: 50,
            calibration_redraws: 10_000,
            imputation_redraws: 4_000,
        }
    }
}

pub const KKT: &str = "calibration_kkt";
pub const NEWTON: &str = "logistic_newton";
pub const GRADIENT: &str = "imputation_gradient";
pub const CENSUS: &str = "census_identity";
pub const CALIBRATION_MC: &str = "calibration_variance_mc";
pub const IMPUTATION_MC: &str = "imputation_variance_mc";

const CALIBRATION_MC_BAND: (f64, f64) = (0.90, 1.10);
const IMPUTATION_MC_BAND: (f64, f64) = (0.80, 1.20);

// Stream ordinals, one per check.
const KKT_STREAM: u32 = 1;
const NEWTON_STREAM: u32 = 2;
const GRADIENT_STREAM: u32 = 3;
const TOY_STREAM: u32 = 4;
const CALIBRATION_STREAM: u32 = 5;
const IMPUTATION_STREAM: u32 = 6;

pub fn run_validation(opts: &ValidateOptions) -> Result<ValidationReport> {
    let streams = Streams::new(opts.seed);
    let toy = toy_population(
        600,
        40,
        &mut streams.stream(TOY_STREAM, 0, Role::VillageSizes),
    );
    let y = beta_outcomes(
        &toy,
        0.3,
        &mut streams.stream(TOY_STREAM, 0, Role::Outcomes),
    );
    let checks = vec![
        check_kkt(&streams, opts.kkt_instances),
        check_newton(&streams),
        check_gradient(&toy, &y, &streams),
        check_census_identity(opts.seed)?,
        check_calibration_variance(&toy, &y, &streams, opts.calibration_redraws),
        check_imputation_variance(
            &toy,
            &y,
            &streams,
            opts.imputation_redraws,
            opts.sandwich_factor,
        ),
    ];
    Ok(ValidationReport { checks })
}

/// Equal-sized villages with random child ages and sexes and no village
/// covariates.
pub fn toy_population<R: Rng>(n_villages: usize, size: u32, rng: &mut R) -> Population {
    let villages: Vec<Village> = (0..n_villages)
        .map(|id| Village {
            id,
            n_children: size,
            population_scaled: 0.0,
            distance_km: 0.0,
            baseline_vaccinated: 0,
            baseline_logodds: 0.0,
        })
        .collect();
    let children: Vec<Child> = (0..n_villages * size as usize)
        .map(|id| Child {
            id,
            village_id: id / size as usize,
            age_months: rng.random_range(12..=24),
            male: rng.random_bool(0.5),
            guardian_age_yr: 30.0,
            guardian_male: false,
        })
        .collect();
    Population::new(villages, children).expect("toy population is consistent")
}

/// Outcomes with a village-level probability drawn from Beta(a, a).
pub fn beta_outcomes<R: Rng>(pop: &Population, a: f64, rng: &mut R) -> Vec<bool> {
    let beta = Beta::new(a, a).expect("positive shape");
    let mut y = Vec::with_capacity(pop.total_children());
    for j in 0..pop.n_villages() {
        let p: f64 = beta.sample(rng);
        for _ in pop.village_range(j) {
            y.push(rng.random_bool(p));
        }
    }
    y
}

/// `m` villages by SRS, then `v` children by SRS within each.
fn two_stage_sample<R: Rng>(
    pop: &Population,
    m: usize,
    v: usize,
    attended: &mut [bool],
    rng: &mut R,
) -> Sample {
    let villages = index::sample(rng, pop.n_villages(), m).into_vec();
    for &j in &villages {
        let range = pop.village_range(j);
        for i in range.clone() {
            attended[i] = false;
        }
        for k in index::sample(rng, range.len(), v) {
            attended[range.start + k] = true;
        }
    }
    Sample::from_villages(pop, attended, villages)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn check_kkt(streams: &Streams, instances: u32) -> Check {
    let mut worst_weight = 0.0f64;
    let mut worst_residual = 0.0f64;
    let mut failures = 0;
    for k in 0..instances {
        let mut rng = streams.stream(KKT_STREAM, k, Role::Outcomes);
        let p = rng.random_range(1..=4);
        let n = rng.random_range(p + 3..=30);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r = vec![1.0];
                r.extend((1..p).map(|_| rng.random_range(-2.0..3.0)));
                r
            })
            .collect();
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
        let totals: Vec<f64> = (0..p)
            .map(|c| {
                rows.iter().zip(&d).map(|(r, di)| r[c] * di).sum::<f64>()
                    * rng.random_range(0.8..1.2)
            })
            .collect();
        let design = Design::from_rows(Auxiliary::ALL[..p].to_vec(), &rows);
        match (
            calibrate_weights(&d, &design, &totals),
            oracles::kkt_calibration(&d, &rows, &totals),
        ) {
            (Ok(cal), Some(w)) => {
                let scale = w.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                worst_weight = worst_weight.max(max_abs_diff(&cal.weights, &w) / scale);
                worst_residual = worst_residual.max(cal.constraint_residual);
            }
            _ => failures += 1,
        }
    }
    Check {
        name: KKT,
        passed: failures == 0 && worst_weight < 1e-8 && worst_residual < 1e-8,
        detail: format!(
            "{instances} instances, max weight difference {worst_weight:.2e}, max constraint residual {worst_residual:.2e}, {failures} solver failures"
        ),
    }
}

fn check_newton(streams: &Streams) -> Check {
    let mut worst = 0.0f64;
    let mut failures = 0;
    let instances = 20;
    for k in 0..instances {
        let mut rng = streams.stream(NEWTON_STREAM, k, Role::Outcomes);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let truth = [0.8, -0.5, 0.3];
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| vec![1.0, normal.sample(&mut rng), rng.random_range(0.0..2.0)])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| {
                let eta: f64 = r.iter().zip(&truth).map(|(a, b)| a * b).sum();
                f64::from(u8::from(rng.random_bool(expit(eta))))
            })
            .collect();
        let design = Design::from_rows(Auxiliary::ALL[..3].to_vec(), &rows);
        match (
            fit_logistic(&design, &y, &LogisticConfig::default()),
            oracles::newton_logistic(&rows, &y, 100),
        ) {
            (Ok(fit), Some(beta)) => worst = worst.max(max_abs_diff(&fit.beta, &beta)),
            _ => failures += 1,
        }
    }
    Check {
        name: NEWTON,
        passed: failures == 0 && worst < 1e-6,
        detail: format!("{instances} data sets, max coefficient difference {worst:.2e}, {failures} fit failures"),
    }
}

fn check_gradient(toy: &Population, y: &[bool], streams: &Streams) -> Check {
    let columns = [
        Auxiliary::Intercept,
        Auxiliary::ChildAge,
        Auxiliary::ChildMale,
    ];
    let census = AuxiliaryMatrix::from_population(toy, &columns);
    let mut rng = streams.stream(GRADIENT_STREAM, 0, Role::VillageSampling);
    let mut attended = vec![false; toy.total_children()];
    let sample = two_stage_sample(toy, 30, 30, &mut attended, &mut rng);
    let x = census.design.select_rows(&sample.respondents);
    let yr: Vec<f64> = sample
        .respondents
        .iter()
        .map(|&i| f64::from(u8::from(y[i])))
        .collect();
    let fit = match fit_logistic(&x, &yr, &LogisticConfig::default()) {
        Ok(f) => f,
        Err(e) => {
            return Check {
                name: GRADIENT,
                passed: false,
                detail: format!("fit failed: {e}"),
            }
        }
    };
    let analytic = imputation_gradient(&fit, &census.design);
    let numeric = oracles::central_gradient(
        |beta| {
            let mut probe = fit.clone();
            probe.beta = beta.to_vec();
            imputation_estimate(&probe, &census.design)
        },
        &fit.beta,
        1e-5,
    );
    let rel = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| {
        m.max((a - n).abs() / a.abs().max(f64::MIN_POSITIVE))
    });
    Check {
        name: GRADIENT,
        passed: rel < 1e-4,
        detail: format!("max componentwise relative difference from central differences {rel:.2e}"),
    }
}

/// Sampling every village with full attendance reproduces the census
/// proportion exactly under both estimators.
fn check_census_identity(seed: u64) -> Result<Check> {
    let cfg = PopulationConfig {
        n_villages: 40,
        rng_seed: seed,
        ..PopulationConfig::default()
    };
    let oc = OutcomeCoefficients::default();
    let (pop, _) = build_census(&cfg, &oc)?;
    let streams = Streams::new(seed);
    let follow = generate_followup(
        &pop,
        &oc,
        &mut streams.stream(CALIBRATION_STREAM, 0, Role::Outcomes),
    );
    let attended = vec![true; pop.total_children()];
    let sample = draw_sample(
        &pop,
        &attended,
        1.0,
        &mut streams.stream(CALIBRATION_STREAM, 0, Role::VillageSampling),
    )?;
    let aux = AuxiliaryMatrix::standard(&pop);
    let opts = EstimatorOptions::default();
    let cal = estimate_calibrated(&pop, &aux, &sample, &follow.y1, &opts);
    let imp = estimate_imputation(&pop, &aux, &sample, &follow.y1, &opts);
    Ok(match (cal, imp) {
        (Ok(c), Ok(i)) => {
            let dc = (c.p_hat - follow.p_true).abs();
            let di = (i.p_hat - follow.p_true).abs();
            Check {
                name: CENSUS,
                passed: dc < 1e-10 && di < 1e-8,
                detail: format!(
                    "p_true {:.6}, calibrated off by {dc:.1e}, imputation off by {di:.1e}",
                    follow.p_true
                ),
            }
        }
        (c, i) => Check {
            name: CENSUS,
            passed: false,
            detail: format!("estimation failed: {:?} / {:?}", c.err(), i.err()),
        },
    })
}

struct VarianceMc {
    mean_se2: f64,
    var_p_hat: f64,
    failures: usize,
}

impl VarianceMc {
    fn ratio(&self) -> f64 {
        self.mean_se2 / self.var_p_hat
    }

    fn check(&self, name: &'static str, redraws: u32, band: (f64, f64)) -> Check {
        let r = self.ratio();
        Check {
            name,
            passed: self.failures == 0 && r >= band.0 && r <= band.1,
            detail: format!(
                "{redraws} redraws, mean se² / Var(p̂) = {r:.3} (accept [{:.2}, {:.2}]), {} failures",
                band.0, band.1, self.failures
            ),
        }
    }
}

/// Redraws only the two-stage sample for fixed outcomes and compares the
/// average estimated variance with the Monte Carlo variance of p̂.
fn variance_mc(
    toy: &Population,
    y: &[bool],
    streams: &Streams,
    stream: u32,
    redraws: u32,
    m: usize,
    estimator: impl Fn(&Sample) -> Option<(f64, f64)> + Sync,
) -> VarianceMc {
    let draws: Vec<Option<(f64, f64)>> = (0..redraws)
        .into_par_iter()
        .map_init(
            || vec![false; y.len()],
            |attended, k| {
                let mut rng: ChaCha8Rng = streams.stream(stream, k, Role::VillageSampling);
                let sample = two_stage_sample(toy, m, 30, attended, &mut rng);
                let out = estimator(&sample);
                for &i in &sample.respondents {
                    attended[i] = false;
                }
                out
            },
        )
        .collect();
    let ok: Vec<(f64, f64)> = draws.iter().flatten().copied().collect();
    let p_hats: Vec<f64> = ok.iter().map(|d| d.0).collect();
    let (_, var_p_hat) = oracles::mean_var(&p_hats);
    VarianceMc {
        mean_se2: ok.iter().map(|d| d.1 * d.1).sum::<f64>() / ok.len() as f64,
        var_p_hat,
        failures: draws.len() - ok.len(),
    }
}

fn check_calibration_variance(
    toy: &Population,
    y: &[bool],
    streams: &Streams,
    redraws: u32,
) -> Check {
    let census =
        AuxiliaryMatrix::from_population(toy, &[Auxiliary::Intercept, Auxiliary::ChildAge]);
    let opts = EstimatorOptions::default();
    let mc = variance_mc(toy, y, streams, CALIBRATION_STREAM, redraws, 6, |s| {
        estimate_calibrated(toy, &census, s, y, &opts)
            .ok()
            .map(|r| (r.p_hat, r.se))
    });
    mc.check(CALIBRATION_MC, redraws, CALIBRATION_MC_BAND)
}

fn check_imputation_variance(
    toy: &Population,
    y: &[bool],
    streams: &Streams,
    redraws: u32,
    sandwich_factor: Option<f64>,
) -> Check {
    let census =
        AuxiliaryMatrix::from_population(toy, &[Auxiliary::Intercept, Auxiliary::ChildAge]);
    let opts = EstimatorOptions {
        sandwich_factor_override: sandwich_factor,
        ..EstimatorOptions::default()
    };
    let mc = variance_mc(toy, y, streams, IMPUTATION_STREAM, redraws, 30, |s| {
        estimate_imputation(toy, &census, s, y, &opts)
            .ok()
            .map(|r| (r.p_hat, r.se))
    });
    mc.check(IMPUTATION_MC, redraws, IMPUTATION_MC_BAND)
}
