//! Logistic regression by IRLS and its cluster-robust sandwich covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::aux::{Auxiliary, Design};
use super::calibration::weighted_crossprod;
use crate::dgm::expit;
use crate::error::EstimationFailure;
use crate::linalg::{inverse_spd, scaled_condition, solve_spd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub max_iterations: usize,
    /// Relative deviance change `|Δdev| / (|dev| + 0.1)` at which IRLS stops.
    pub tolerance: f64,
    /// Coefficient magnitude treated as evidence of separation.
    pub separation_bound: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            max_iterations: 50,
            tolerance: 1e-8,
            separation_bound: 15.0,
        }
    }
}

/// Converged model state: coefficients, the data they were fitted on and
/// the inverse information ("bread") at the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub beta: Vec<f64>,
    pub design: Design,
    pub y: Vec<f64>,
    pub fitted: Vec<f64>,
    pub bread: DMatrix<f64>,
    pub deviance: f64,
    pub iterations: usize,
}

impl LogisticFit {
    pub fn columns(&self) -> &[Auxiliary] {
        self.design.columns()
    }
}

fn deviance(y: &[f64], mu: &[f64]) -> f64 {
    -2.0 * y
        .iter()
        .zip(mu)
        .map(|(&yi, &m)| {
            let m = m.clamp(1e-300, 1.0 - 1e-16);
            yi * m.ln() + (1.0 - yi) * (1.0 - m).ln()
        })
        .sum::<f64>()
}

fn linear_predictor(x: &Design, beta: &[f64]) -> Vec<f64> {
    x.rows()
        .map(|r| r.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect()
}

/// Maximum-likelihood logistic fit by iteratively reweighted least squares.
pub fn fit_logistic(
    x: &Design,
    y: &[f64],
    cfg: &LogisticConfig,
) -> Result<LogisticFit, EstimationFailure> {
    let n = x.n_rows();
    let p = x.n_cols();
    assert_eq!(y.len(), n, "one outcome per row");
    if n == 0 {
        return Err(EstimationFailure::EmptySample);
    }
    if n < p {
        return Err(EstimationFailure::TooFewRespondents { have: n, need: p });
    }
    let ones = y.iter().filter(|&&v| v > 0.5).count();
    if ones == 0 || ones == n {
        return Err(EstimationFailure::SingleClass);
    }

    let mut mu: Vec<f64> = y.iter().map(|&v| (v + 0.5) / 2.0).collect();
    let mut eta: Vec<f64> = mu.iter().map(|&m| (m / (1.0 - m)).ln()).collect();
    let mut dev_old = deviance(y, &mu);
    let mut beta = vec![0.0; p];
    let mut converged = false;
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    for iter in 1..=cfg.max_iterations {
        iterations = iter;
        let mut xwz = DVector::<f64>::zeros(p);
        for i in 0..n {
            let wi = (mu[i] * (1.0 - mu[i])).max(1e-12);
            w[i] = wi;
            let zi = eta[i] + (y[i] - mu[i]) / wi;
            for (acc, v) in xwz.iter_mut().zip(x.row(i)) {
                *acc += wi * v * zi;
            }
        }
        let xtwx = weighted_crossprod(x, &w);
        let condition = scaled_condition(&xtwx);
        if !(condition <= super::calibration::MAX_CONDITION) {
            return Err(EstimationFailure::Singular { condition });
        }
        let next = solve_spd(&xtwx, &xwz).ok_or(EstimationFailure::Singular { condition })?;
        beta = next.iter().copied().collect();
        eta = linear_predictor(x, &beta);
        mu = eta.iter().map(|&e| expit(e)).collect();
        let dev = deviance(y, &mu);
        converged = (dev - dev_old).abs() / (dev.abs() + 0.1) < cfg.tolerance;
        dev_old = dev;
        let max_abs = beta.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if !converged && max_abs > cfg.separation_bound {
            return Err(EstimationFailure::Separation { max_abs });
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(EstimationFailure::NoConvergence { iterations });
    }
    for (wi, m) in w.iter_mut().zip(&mu) {
        *wi = m * (1.0 - m);
    }
    let info = weighted_crossprod(x, &w);
    let bread = inverse_spd(&info).ok_or(EstimationFailure::Singular {
        condition: scaled_condition(&info),
    })?;
    Ok(LogisticFit {
        beta,
        design: x.clone(),
        y: y.to_vec(),
        fitted: mu,
        bread,
        deviance: dev_old,
        iterations,
    })
}

/// Fits, dropping auxiliaries in [`Auxiliary::DROP_ORDER`] while the
/// information matrix is singular or ill-conditioned.
pub fn fit_logistic_with_fallback(
    x: &Design,
    y: &[f64],
    cfg: &LogisticConfig,
) -> Result<LogisticFit, EstimationFailure> {
    let mut columns = x.columns().to_vec();
    let mut drops = Auxiliary::DROP_ORDER.iter();
    loop {
        let xr = if columns == x.columns() {
            x.clone()
        } else {
            x.restrict(&columns)
        };
        match fit_logistic(&xr, y, cfg) {
            Err(EstimationFailure::Singular { condition }) => {
                match drops.by_ref().find(|a| columns.contains(a)) {
                    Some(a) => {
                        log::debug!(
                            "logistic: dropping {} (condition {condition:.3e})",
                            a.name()
                        );
                        columns.retain(|c| c != a);
                    }
                    None => return Err(EstimationFailure::Singular { condition }),
                }
            }
            other => return other,
        }
    }
}

/// Small-sample factor applied to the clustered meat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SandwichAdjustment {
    /// c = g / (g − 1) for g clusters.
    #[default]
    ClusterAdjusted,
    /// c = 1.
    None,
}

impl SandwichAdjustment {
    pub fn factor(self, clusters: usize) -> f64 {
        match self {
            SandwichAdjustment::ClusterAdjusted => clusters as f64 / (clusters as f64 - 1.0),
            SandwichAdjustment::None => 1.0,
        }
    }
}

/// Score contribution of each cluster, Σ_{i∈g} xᵢ (yᵢ − p̂ᵢ). `clusters`
/// holds a cluster label per fitted row.
pub fn cluster_scores(fit: &LogisticFit, clusters: &[usize]) -> Vec<DVector<f64>> {
    assert_eq!(
        clusters.len(),
        fit.design.n_rows(),
        "one cluster label per row"
    );
    let p = fit.design.n_cols();
    let mut order: Vec<usize> = clusters.to_vec();
    order.sort_unstable();
    order.dedup();
    let mut scores = vec![DVector::<f64>::zeros(p); order.len()];
    for (i, r) in fit.design.rows().enumerate() {
        let g = order.binary_search(&clusters[i]).expect("label present");
        let resid = fit.y[i] - fit.fitted[i];
        for (acc, v) in scores[g].iter_mut().zip(r) {
            *acc += v * resid;
        }
    }
    scores
}

/// Cluster-robust covariance `c · B (Σ_g u_g u_gᵀ) B`.
pub fn cluster_sandwich(
    fit: &LogisticFit,
    clusters: &[usize],
    adjustment: SandwichAdjustment,
) -> Result<DMatrix<f64>, EstimationFailure> {
    let scores = cluster_scores(fit, clusters);
    if scores.len() < 2 {
        return Err(EstimationFailure::SingleCluster);
    }
    Ok(sandwich_with_factor(
        fit,
        &scores,
        adjustment.factor(scores.len()),
    ))
}

pub(crate) fn sandwich_with_factor(
    fit: &LogisticFit,
    scores: &[DVector<f64>],
    factor: f64,
) -> DMatrix<f64> {
    let p = fit.design.n_cols();
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for u in scores {
        meat += u * u.transpose();
    }
    let s = &fit.bread * meat * &fit.bread * factor;
    (&s + s.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn intercept_only(y: &[f64]) -> Design {
        let rows: Vec<Vec<f64>> = y.iter().map(|_| vec![1.0]).collect();
        Design::from_rows(vec![Auxiliary::Intercept], &rows)
    }

    #[test]
    fn intercept_only_fit_is_sample_logit() {
        let y: Vec<f64> = (0..40).map(|i| f64::from(u8::from(i % 4 != 0))).collect();
        let fit = fit_logistic(&intercept_only(&y), &y, &LogisticConfig::default()).unwrap();
        assert_abs_diff_eq!(fit.beta[0], (0.75f64 / 0.25).ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(fit.beta[0], 1.09861, epsilon = 1e-5);
    }

    #[test]
    fn two_by_two_table_slope_is_log_odds_ratio() {
        // (x=1: 30 yes, 10 no; x=0: 10 yes, 30 no)
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (x, yes, no) in [(1.0, 30, 10), (0.0, 10, 30)] {
            for k in 0..(yes + no) {
                rows.push(vec![1.0, x]);
                y.push(if k < yes { 1.0 } else { 0.0 });
            }
        }
        let x = Design::from_rows(vec![Auxiliary::Intercept, Auxiliary::ChildMale], &rows);
        let fit = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        assert_abs_diff_eq!(fit.beta[1], 9f64.ln(), epsilon = 1e-8);
        assert_abs_diff_eq!(fit.beta[1], 2.19722, epsilon = 1e-5);
    }

    #[test]
    fn single_class_is_rejected() {
        let y = vec![1.0; 10];
        assert_eq!(
            fit_logistic(&intercept_only(&y), &y, &LogisticConfig::default()).unwrap_err(),
            EstimationFailure::SingleClass
        );
    }

    #[test]
    fn complete_separation_is_detected() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, f64::from(i)]).collect();
        let y: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i >= 10))).collect();
        let x = Design::from_rows(vec![Auxiliary::Intercept, Auxiliary::ChildAge], &rows);
        assert!(matches!(
            fit_logistic(&x, &y, &LogisticConfig::default()),
            Err(EstimationFailure::Separation { .. })
        ));
    }

    #[test]
    fn one_cluster_is_rejected() {
        let y: Vec<f64> = (0..10).map(|i| f64::from(u8::from(i % 2 == 0))).collect();
        let fit = fit_logistic(&intercept_only(&y), &y, &LogisticConfig::default()).unwrap();
        assert_eq!(
            cluster_sandwich(&fit, &[3; 10], SandwichAdjustment::ClusterAdjusted).unwrap_err(),
            EstimationFailure::SingleCluster
        );
    }

    #[test]
    fn identical_clusters_have_doubled_meat() {
        // Clusters 0 and 1 hold the same four rows; cluster 2 differs so the
        // per-cluster scores do not vanish at the MLE.
        let base = [(0.0, 1.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let other = [(0.0, 0.0), (1.0, 1.0), (0.0, 0.0), (1.0, 0.0)];
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut clusters = Vec::new();
        for (g, data) in [(0, &base), (1, &base), (2, &other)] {
            for &(x, yi) in data.iter() {
                rows.push(vec![1.0, x]);
                y.push(yi);
                clusters.push(g);
            }
        }
        let x = Design::from_rows(vec![Auxiliary::Intercept, Auxiliary::ChildMale], &rows);
        let fit = fit_logistic(&x, &y, &LogisticConfig::default()).unwrap();
        let scores = cluster_scores(&fit, &clusters);
        assert_eq!(scores.len(), 3);
        assert_abs_diff_eq!((&scores[0] - &scores[1]).norm(), 0.0, epsilon = 1e-12);
        assert!(scores[0].norm() > 0.1);
        let s = cluster_sandwich(&fit, &clusters, SandwichAdjustment::None).unwrap();
        let u = &scores[0];
        let w = &scores[2];
        let meat = u * u.transpose() * 2.0 + w * w.transpose();
        let expected = &fit.bread * meat * &fit.bread;
        assert_abs_diff_eq!((s - expected).norm(), 0.0, epsilon = 1e-12);
    }
}
