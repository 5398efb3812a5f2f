//! Chi-square distance calibration, the calibrated Horvitz–Thompson
//! proportion, and its two-stage linearization variance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::aux::{Auxiliary, Design};
use crate::dgm::Sample;
use crate::error::EstimationFailure;
use crate::linalg::{scaled_condition, solve_spd};
use crate::population::Population;

pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub weights: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Auxiliaries actually used (after any collinearity drops).
    pub columns: Vec<Auxiliary>,
    /// ‖Σ w x − t‖∞ / ‖t‖∞.
    pub constraint_residual: f64,
}

/// Weighted cross-product Σ wᵢ xᵢ xᵢᵀ.
pub(crate) fn weighted_crossprod(x: &Design, w: &[f64]) -> DMatrix<f64> {
    let p = x.n_cols();
    let mut m = DMatrix::<f64>::zeros(p, p);
    for (r, &wi) in x.rows().zip(w) {
        for a in 0..p {
            let wa = wi * r[a];
            for b in a..p {
                m[(a, b)] += wa * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(a, b)] = m[(b, a)];
        }
    }
    m
}

fn weighted_total(x: &Design, w: &[f64]) -> DVector<f64> {
    let mut t = DVector::<f64>::zeros(x.n_cols());
    for (r, &wi) in x.rows().zip(w) {
        for (acc, v) in t.iter_mut().zip(r) {
            *acc += wi * v;
        }
    }
    t
}

/// Closed-form chi-square calibration: `w = d (1 + xᵀλ)` with
/// `(Σ d x xᵀ) λ = t − Σ d x`. Negative weights are allowed.
pub fn calibrate_weights(
    d: &[f64],
    x: &Design,
    totals: &[f64],
) -> Result<Calibration, EstimationFailure> {
    let n = x.n_rows();
    let p = x.n_cols();
    assert_eq!(d.len(), n, "one design weight per row");
    assert_eq!(totals.len(), p, "one total per column");
    if n == 0 {
        return Err(EstimationFailure::EmptySample);
    }
    if n < p {
        return Err(EstimationFailure::TooFewRespondents { have: n, need: p });
    }
    let t_matrix = weighted_crossprod(x, d);
    let condition = scaled_condition(&t_matrix);
    if !(condition <= MAX_CONDITION) {
        return Err(EstimationFailure::Singular { condition });
    }
    let gap = DVector::from_column_slice(totals) - weighted_total(x, d);
    let lambda = solve_spd(&t_matrix, &gap).ok_or(EstimationFailure::Singular { condition })?;
    let weights: Vec<f64> = x
        .rows()
        .zip(d)
        .map(|(r, &di)| {
            let g: f64 = r.iter().zip(lambda.iter()).map(|(a, b)| a * b).sum();
            di * (1.0 + g)
        })
        .collect();
    let achieved = weighted_total(x, &weights);
    let scale = totals
        .iter()
        .fold(0.0f64, |a, t| a.max(t.abs()))
        .max(f64::MIN_POSITIVE);
    let constraint_residual = achieved
        .iter()
        .zip(totals)
        .fold(0.0f64, |a, (w, t)| a.max((w - t).abs()))
        / scale;
    Ok(Calibration {
        weights,
        lambda: lambda.iter().copied().collect(),
        columns: x.columns().to_vec(),
        constraint_residual,
    })
}

/// Calibrates, dropping auxiliaries in [`Auxiliary::DROP_ORDER`] while the
/// system stays singular or ill-conditioned.
pub fn calibrate_with_fallback(
    d: &[f64],
    x: &Design,
    totals: &[f64],
) -> Result<Calibration, EstimationFailure> {
    let mut columns = x.columns().to_vec();
    let mut drops = Auxiliary::DROP_ORDER.iter();
    loop {
        let (xr, tr) = restrict_with_totals(x, totals, &columns);
        match calibrate_weights(d, &xr, &tr) {
            Err(EstimationFailure::Singular { condition }) => {
                match drops.by_ref().find(|a| columns.contains(a)) {
                    Some(a) => {
                        log::debug!(
                            "calibration: dropping {} (condition {condition:.3e})",
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

pub(crate) fn restrict_with_totals(
    x: &Design,
    totals: &[f64],
    keep: &[Auxiliary],
) -> (Design, Vec<f64>) {
    if keep == x.columns() {
        return (x.clone(), totals.to_vec());
    }
    let t = keep
        .iter()
        .map(|a| {
            totals[x
                .columns()
                .iter()
                .position(|c| c == a)
                .expect("column present")]
        })
        .collect();
    (x.restrict(keep), t)
}

/// Horvitz–Thompson proportion `Σ w y / N` against the known population size.
pub fn ht_proportion(w: &[f64], y: &[f64], n_pop: f64) -> Result<f64, EstimationFailure> {
    if w.is_empty() {
        return Err(EstimationFailure::EmptySample);
    }
    assert!(n_pop > 0.0, "population size must be positive");
    Ok(w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n_pop)
}

/// Denominator of the linearized standard error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDivisor {
    /// N̂ = Σ_{sampled j} V_j / π_j.
    #[default]
    Estimated,
    /// The known census size N.
    Known,
}

/// Two-stage linearization standard error of the calibrated proportion,
/// without finite population corrections.
///
/// `x`, `d` and `y` are aligned with `sample.respondents`.
pub fn calibration_variance(
    sample: &Sample,
    pop: &Population,
    x: &Design,
    d: &[f64],
    y: &[f64],
    divisor: VarianceDivisor,
) -> Result<f64, EstimationFailure> {
    let m = sample.m();
    if m < 2 {
        return Err(EstimationFailure::TooFewVillages);
    }
    if sample.n_respondents() == 0 {
        return Err(EstimationFailure::EmptySample);
    }
    let big_m = pop.n_villages() as f64;
    let mf = m as f64;
    let pi_village = mf / big_m;

    // GREG residuals from the d-weighted regression of y on x.
    let t_matrix = weighted_crossprod(x, d);
    let mut xy = DVector::<f64>::zeros(x.n_cols());
    for ((r, &di), &yi) in x.rows().zip(d).zip(y) {
        for (acc, v) in xy.iter_mut().zip(r) {
            *acc += di * v * yi;
        }
    }
    let condition = scaled_condition(&t_matrix);
    let coef = solve_spd(&t_matrix, &xy).ok_or(EstimationFailure::Singular { condition })?;
    let residuals: Vec<f64> = x
        .rows()
        .zip(y)
        .map(|(r, &yi)| yi - r.iter().zip(coef.iter()).map(|(a, b)| a * b).sum::<f64>())
        .collect();

    // Village residual totals z_j = Σ e / π_i|j, and within-village variances.
    let mut z = vec![0.0; m];
    let mut sum_e = vec![0.0; m];
    let mut sum_e2 = vec![0.0; m];
    for (&slot, &e) in sample.respondent_slot.iter().zip(&residuals) {
        sum_e[slot] += e;
        sum_e2[slot] += e * e;
    }
    let mut within = 0.0;
    for slot in 0..m {
        let v = sample.respondents_per_village[slot];
        if v == 0 {
            continue;
        }
        let big_v = f64::from(pop.villages()[sample.sampled_villages[slot]].n_children);
        let vf = v as f64;
        z[slot] = sum_e[slot] * big_v / vf;
        if v > 1 {
            let mean = sum_e[slot] / vf;
            let s2 = ((sum_e2[slot] - vf * mean * mean) / (vf - 1.0)).max(0.0);
            within += (1.0 / pi_village) * big_v * big_v / vf * s2;
        }
    }
    let z_mean = z.iter().sum::<f64>() / mf;
    let s2_z = z.iter().map(|zj| (zj - z_mean).powi(2)).sum::<f64>() / (mf - 1.0);
    let between = big_m * big_m / mf * s2_z;

    let denom = match divisor {
        VarianceDivisor::Estimated => {
            sample
                .sampled_villages
                .iter()
                .map(|&j| f64::from(pop.villages()[j].n_children))
                .sum::<f64>()
                / pi_village
        }
        VarianceDivisor::Known => pop.total_children() as f64,
    };
    Ok((between + within).max(0.0).sqrt() / denom)
}
