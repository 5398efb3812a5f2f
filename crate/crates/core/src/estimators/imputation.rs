//! Mass imputation over the census and its delta-method variance.

use nalgebra::{DMatrix, DVector};

use super::aux::{Auxiliary, Design};
use super::logistic::LogisticFit;
use crate::dgm::expit;

fn column_map(census: &Design, columns: &[Auxiliary]) -> Vec<usize> {
    columns
        .iter()
        .map(|a| {
            census
                .columns()
                .iter()
                .position(|c| c == a)
                .expect("census carries every fitted auxiliary")
        })
        .collect()
}

fn census_predictor<'a>(
    fit: &'a LogisticFit,
    census: &'a Design,
) -> impl Iterator<Item = (&'a [f64], f64)> + 'a {
    let map = column_map(census, fit.columns());
    census.rows().map(move |r| {
        let eta: f64 = map.iter().zip(&fit.beta).map(|(&k, b)| r[k] * b).sum();
        (r, eta)
    })
}

/// Mean fitted probability over every census child (respondents included).
pub fn imputation_estimate(fit: &LogisticFit, census: &Design) -> f64 {
    let n = census.n_rows() as f64;
    census_predictor(fit, census)
        .map(|(_, eta)| expit(eta))
        .sum::<f64>()
        / n
}

/// Gradient of the imputation estimate with respect to β̂:
/// (1/N) Σ p̂ᵢ(1 − p̂ᵢ) xᵢ.
pub fn imputation_gradient(fit: &LogisticFit, census: &Design) -> Vec<f64> {
    let map = column_map(census, fit.columns());
    let mut g = vec![0.0; map.len()];
    for (r, eta) in census_predictor(fit, census) {
        let p = expit(eta);
        let s = p * (1.0 - p);
        for (acc, &k) in g.iter_mut().zip(&map) {
            *acc += s * r[k];
        }
    }
    let n = census.n_rows() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaVariance {
    pub se: f64,
    /// The quadratic form came out negative and was clamped at zero.
    pub clamped: bool,
}

/// Delta-method standard error `sqrt(∇ᵀ Σ̂ ∇)`.
pub fn imputation_variance(
    fit: &LogisticFit,
    covariance: &DMatrix<f64>,
    census: &Design,
) -> DeltaVariance {
    let g = DVector::from_vec(imputation_gradient(fit, census));
    let q = (g.transpose() * covariance * &g)[(0, 0)];
    if q < 0.0 {
        DeltaVariance {
            se: 0.0,
            clamped: true,
        }
    } else {
        DeltaVariance {
            se: q.sqrt(),
            clamped: false,
        }
    }
}
