//! The two selection-bias corrected estimators of the census proportion.
//!
//! Both use the same auxiliaries: the village and child covariates of the
//! outcome model plus the village baseline log-odds, with an intercept.

pub mod aux;
pub mod calibration;
pub mod design;
pub mod imputation;
pub mod intervals;
pub mod logistic;

use serde::{Deserialize, Serialize};

pub use aux::{Auxiliary, AuxiliaryMatrix, Design};
pub use calibration::{
    calibrate_weights, calibrate_with_fallback, calibration_variance, ht_proportion, Calibration,
    VarianceDivisor,
};
pub use design::{compute_design_weights, DesignWeights};
pub use imputation::{
    imputation_estimate, imputation_gradient, imputation_variance, DeltaVariance,
};
pub use intervals::wald_intervals;
pub use logistic::{
    cluster_sandwich, fit_logistic, fit_logistic_with_fallback, LogisticConfig, LogisticFit,
    SandwichAdjustment,
};

use crate::dgm::Sample;
use crate::error::EstimationFailure;
use crate::population::Population;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Calibrated,
    LogisticImputation,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Calibrated, Method::LogisticImputation];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Calibrated => "calibrated",
            Method::LogisticImputation => "logistic_imputation",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Calibrated => "Calibrated",
            Method::LogisticImputation => "Logistic Regression",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub n_respondents: usize,
    pub m_villages: usize,
    pub iterations: usize,
    pub dropped: Vec<Auxiliary>,
    pub variance_clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub method: Method,
    pub p_hat: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub ci90: (f64, f64),
    pub diagnostics: Diagnostics,
}

impl EstimateResult {
    fn new(method: Method, p_hat: f64, se: f64, diagnostics: Diagnostics) -> Self {
        let (ci95, ci90) = wald_intervals(p_hat, se);
        EstimateResult {
            method,
            p_hat,
            se,
            ci95,
            ci90,
            diagnostics,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub sandwich: SandwichAdjustment,
    pub variance_divisor: VarianceDivisor,
    pub logistic: LogisticConfig,
    /// Overrides the sandwich small-sample factor; used for fault injection.
    #[serde(skip)]
    pub sandwich_factor_override: Option<f64>,
}

fn respondent_outcomes(sample: &Sample, y1: &[bool]) -> Vec<f64> {
    sample
        .respondents
        .iter()
        .map(|&i| f64::from(u8::from(y1[i])))
        .collect()
}

fn dropped(full: &[Auxiliary], used: &[Auxiliary]) -> Vec<Auxiliary> {
    full.iter().filter(|a| !used.contains(a)).copied().collect()
}

/// Calibration-weighted Horvitz–Thompson estimate with linearized SE.
pub fn estimate_calibrated(
    pop: &Population,
    census: &AuxiliaryMatrix,
    sample: &Sample,
    y1: &[bool],
    opts: &EstimatorOptions,
) -> Result<EstimateResult, EstimationFailure> {
    if sample.n_respondents() == 0 {
        return Err(EstimationFailure::EmptySample);
    }
    let dw = compute_design_weights(sample, pop)?;
    let x = census.design.select_rows(&sample.respondents);
    let cal = calibrate_with_fallback(&dw.d, &x, &census.totals)?;
    let y = respondent_outcomes(sample, y1);
    let p_hat = ht_proportion(&cal.weights, &y, pop.total_children() as f64)?;
    let xr = if cal.columns == x.columns() {
        x
    } else {
        x.restrict(&cal.columns)
    };
    let se = calibration_variance(sample, pop, &xr, &dw.d, &y, opts.variance_divisor)?;
    Ok(EstimateResult::new(
        Method::Calibrated,
        p_hat,
        se,
        Diagnostics {
            n_respondents: sample.n_respondents(),
            m_villages: sample.m(),
            iterations: 0,
            dropped: dropped(census.design.columns(), &cal.columns),
            variance_clamped: false,
        },
    ))
}

/// Logistic mass-imputation estimate with cluster-robust delta-method SE.
pub fn estimate_imputation(
    pop: &Population,
    census: &AuxiliaryMatrix,
    sample: &Sample,
    y1: &[bool],
    opts: &EstimatorOptions,
) -> Result<EstimateResult, EstimationFailure> {
    if sample.n_respondents() == 0 {
        return Err(EstimationFailure::EmptySample);
    }
    let x = census.design.select_rows(&sample.respondents);
    let y = respondent_outcomes(sample, y1);
    let fit = fit_logistic_with_fallback(&x, &y, &opts.logistic)?;
    let clusters: Vec<usize> = sample
        .respondents
        .iter()
        .map(|&i| pop.children()[i].village_id)
        .collect();
    let covariance = match opts.sandwich_factor_override {
        Some(c) => {
            let scores = logistic::cluster_scores(&fit, &clusters);
            if scores.len() < 2 {
                return Err(EstimationFailure::SingleCluster);
            }
            logistic::sandwich_with_factor(&fit, &scores, c)
        }
        None => cluster_sandwich(&fit, &clusters, opts.sandwich)?,
    };
    let p_hat = imputation_estimate(&fit, &census.design);
    let delta = imputation_variance(&fit, &covariance, &census.design);
    if delta.clamped {
        log::warn!("imputation variance quadratic form was negative; clamped to zero");
    }
    Ok(EstimateResult::new(
        Method::LogisticImputation,
        p_hat,
        delta.se,
        Diagnostics {
            n_respondents: sample.n_respondents(),
            m_villages: sample.m(),
            iterations: fit.iterations,
            dropped: dropped(census.design.columns(), fit.columns()),
            variance_clamped: delta.clamped,
        },
    ))
}

pub fn estimate(
    method: Method,
    pop: &Population,
    census: &AuxiliaryMatrix,
    sample: &Sample,
    y1: &[bool],
    opts: &EstimatorOptions,
) -> Result<EstimateResult, EstimationFailure> {
    match method {
        Method::Calibrated => estimate_calibrated(pop, census, sample, y1, opts),
        Method::LogisticImputation => estimate_imputation(pop, census, sample, y1, opts),
    }
}
