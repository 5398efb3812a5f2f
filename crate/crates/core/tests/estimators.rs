mod common;

use anchorsim::dgm::{expit, logit, Sample};
use anchorsim::estimators::{
    calibrate_weights, calibration_variance, cluster_sandwich, compute_design_weights,
    estimate_calibrated, estimate_imputation, fit_logistic, ht_proportion, imputation_estimate,
    imputation_variance, Auxiliary, AuxiliaryMatrix, Design, EstimatorOptions, LogisticConfig,
    SandwichAdjustment, VarianceDivisor,
};
use anchorsim::validate::oracles::{gauss_solve, kkt_calibration};
use anchorsim::EstimationFailure;
use approx::assert_abs_diff_eq;
use common::{as_f64, toy_population};
use nalgebra::DMatrix;

const AGES: [u8; 12] = [12, 14, 15, 17, 18, 19, 20, 21, 22, 23, 24, 13];

fn attend(n: usize, who: &[usize]) -> Vec<bool> {
    let mut a = vec![false; n];
    for &i in who {
        a[i] = true;
    }
    a
}

#[test]
fn three_village_toy_calibration_matches_kkt_oracle() {
    // N = 12 in villages of 3, 4 and 5; two of them sampled, six respondents.
    let pop = toy_population(&[3, 4, 5], &AGES);
    let attended = attend(12, &[0, 2, 7, 8, 9, 11]);
    let sample = Sample::from_villages(&pop, &attended, vec![0, 2]);
    assert_eq!(sample.n_respondents(), 6);

    let aux = AuxiliaryMatrix::from_population(&pop, &[Auxiliary::Intercept, Auxiliary::ChildAge]);
    let dw = compute_design_weights(&sample, &pop).unwrap();
    let x = aux.design.select_rows(&sample.respondents);
    let cal = calibrate_weights(&dw.d, &x, &aux.totals).unwrap();
    let rows: Vec<Vec<f64>> = x.rows().map(<[f64]>::to_vec).collect();
    let oracle = kkt_calibration(&dw.d, &rows, &aux.totals).unwrap();
    for (w, o) in cal.weights.iter().zip(&oracle) {
        assert_abs_diff_eq!(*w, *o, epsilon = 1e-8);
    }
    assert!(cal.constraint_residual < 1e-8);

    let y = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
    let brute: f64 = oracle.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / 12.0;
    assert_abs_diff_eq!(
        ht_proportion(&cal.weights, &y, 12.0).unwrap(),
        brute,
        epsilon = 1e-10
    );
    let ones = [1.0; 6];
    assert_abs_diff_eq!(
        ht_proportion(&cal.weights, &ones, 12.0).unwrap(),
        1.0,
        epsilon = 1e-12
    );
}

#[test]
fn design_weight_examples() {
    let pop = toy_population(&[20; 381], &AGES);
    let n = pop.total_children();
    // Half of every village attends.
    let half: Vec<usize> = (0..n).filter(|i| i % 2 == 0).collect();
    let attended = attend(n, &half);
    let sample = Sample::from_villages(&pop, &attended, (0..95).collect());
    let dw = compute_design_weights(&sample, &pop).unwrap();
    for &d in &dw.d {
        assert_abs_diff_eq!(d, 8.021_052_631_578_947, epsilon = 1e-12);
    }

    let everyone = Sample::from_villages(&pop, &vec![true; n], (0..381).collect());
    assert!(compute_design_weights(&everyone, &pop)
        .unwrap()
        .d
        .iter()
        .all(|&d| d == 1.0));

    let all_half = Sample::from_villages(&pop, &attended, (0..381).collect());
    assert_abs_diff_eq!(
        compute_design_weights(&all_half, &pop).unwrap().total(),
        n as f64,
        epsilon = 1e-9
    );
}

#[test]
fn linear_outcome_has_zero_variance() {
    let pop = toy_population(&[6, 8, 7, 9], &AGES);
    let n = pop.total_children();
    let attended = attend(n, &(0..n).filter(|i| i % 3 != 0).collect::<Vec<_>>());
    let sample = Sample::from_villages(&pop, &attended, vec![0, 1, 2, 3]);
    let aux = AuxiliaryMatrix::from_population(&pop, &[Auxiliary::Intercept, Auxiliary::ChildMale]);
    let x = aux.design.select_rows(&sample.respondents);
    let d = compute_design_weights(&sample, &pop).unwrap().d;
    let y: Vec<f64> = x.rows().map(|r| r[1]).collect();
    let se = calibration_variance(&sample, &pop, &x, &d, &y, VarianceDivisor::Estimated).unwrap();
    assert_abs_diff_eq!(se, 0.0, epsilon = 1e-12);
}

/// Hand computation of the variance formula on a three-village census
/// (every village sampled, everyone responding, all weights one).
#[test]
fn census_variance_matches_hand_computation() {
    let pop = toy_population(&[3, 4, 5], &AGES);
    let sample = Sample::from_villages(&pop, &[true; 12], vec![0, 1, 2]);
    let aux = AuxiliaryMatrix::from_population(&pop, &[Auxiliary::Intercept, Auxiliary::ChildAge]);
    let x = aux.design.select_rows(&sample.respondents);
    let y = [1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0];
    let d = [1.0; 12];

    // Ordinary least squares residuals.
    let mut xtx = vec![vec![0.0; 2]; 2];
    let mut xty = vec![0.0; 2];
    for (r, &yi) in x.rows().zip(&y) {
        for a in 0..2 {
            xty[a] += r[a] * yi;
            for b in 0..2 {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    let b = gauss_solve(xtx, xty).unwrap();
    let e: Vec<f64> = x
        .rows()
        .zip(&y)
        .map(|(r, yi)| yi - r[0] * b[0] - r[1] * b[1])
        .collect();

    let groups = [0..3, 3..7, 7..12];
    let z: Vec<f64> = groups.iter().map(|g| e[g.clone()].iter().sum()).collect();
    let z_mean = z.iter().sum::<f64>() / 3.0;
    let s2_z = z.iter().map(|v| (v - z_mean).powi(2)).sum::<f64>() / 2.0;
    let between = 9.0 / 3.0 * s2_z;
    let within: f64 = groups
        .iter()
        .map(|g| {
            let v = g.len() as f64;
            let mean = e[g.clone()].iter().sum::<f64>() / v;
            let s2 = e[g.clone()].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v - 1.0);
            v * v / v * s2
        })
        .sum();
    let expected = (between + within).sqrt() / 12.0;

    let se = calibration_variance(&sample, &pop, &x, &d, &y, VarianceDivisor::Estimated).unwrap();
    assert_abs_diff_eq!(se, expected, epsilon = 1e-12);
    let known = calibration_variance(&sample, &pop, &x, &d, &y, VarianceDivisor::Known).unwrap();
    assert_abs_diff_eq!(known, expected, epsilon = 1e-12);
}

#[test]
fn single_village_variance_is_undefined() {
    let pop = toy_population(&[4, 4], &AGES);
    let sample = Sample::from_villages(&pop, &[true; 8], vec![1]);
    let aux = AuxiliaryMatrix::from_population(&pop, &[Auxiliary::Intercept]);
    let x = aux.design.select_rows(&sample.respondents);
    let r = calibration_variance(
        &sample,
        &pop,
        &x,
        &[2.0; 4],
        &[1.0, 0.0, 1.0, 1.0],
        VarianceDivisor::Estimated,
    );
    assert_eq!(r, Err(EstimationFailure::TooFewVillages));
}

fn fit_on(
    pop: &anchorsim::population::Population,
    columns: &[Auxiliary],
    y: &[f64],
) -> (AuxiliaryMatrix, anchorsim::estimators::LogisticFit) {
    let aux = AuxiliaryMatrix::from_population(pop, columns);
    let fit = fit_logistic(&aux.design, y, &LogisticConfig::default()).unwrap();
    (aux, fit)
}

#[test]
fn imputation_examples() {
    let pop = toy_population(&[4, 4, 4], &AGES);
    let y = [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
    let (aux, fit) = fit_on(&pop, &[Auxiliary::Intercept], &y);
    assert_abs_diff_eq!(fit.beta[0], logit(0.75), epsilon = 1e-9);
    assert_abs_diff_eq!(imputation_estimate(&fit, &aux.design), 0.75, epsilon = 1e-9);

    // A larger census with the same intercept-only fit gives the same answer.
    let big = toy_population(&[40; 10], &AGES);
    let big_aux = AuxiliaryMatrix::from_population(&big, &[Auxiliary::Intercept]);
    assert_abs_diff_eq!(
        imputation_estimate(&fit, &big_aux.design),
        0.75,
        epsilon = 1e-9
    );

    let (aux2, mut fit2) = fit_on(&pop, &[Auxiliary::Intercept, Auxiliary::ChildAge], &y);
    let by_hand: f64 = AGES
        .iter()
        .map(|&a| expit(fit2.beta[0] + fit2.beta[1] * f64::from(a)))
        .sum::<f64>()
        / 12.0;
    assert_abs_diff_eq!(
        imputation_estimate(&fit2, &aux2.design),
        by_hand,
        epsilon = 1e-14
    );

    let zero = DMatrix::<f64>::zeros(2, 2);
    let dv = imputation_variance(&fit2, &zero, &aux2.design);
    assert_eq!((dv.se, dv.clamped), (0.0, false));

    fit2.beta = vec![0.0, 0.0];
    assert_abs_diff_eq!(
        imputation_estimate(&fit2, &aux2.design),
        0.5,
        epsilon = 1e-15
    );
}

#[test]
fn negative_quadratic_form_is_clamped_and_flagged() {
    let pop = toy_population(&[4, 4, 4], &AGES);
    let y = [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
    let (aux, fit) = fit_on(&pop, &[Auxiliary::Intercept], &y);
    let dv = imputation_variance(&fit, &DMatrix::from_element(1, 1, -1e-6), &aux.design);
    assert_eq!((dv.se, dv.clamped), (0.0, true));
}

fn hc0_by_hand(fit: &anchorsim::estimators::LogisticFit) -> Vec<Vec<f64>> {
    let p = fit.beta.len();
    let mut info = vec![vec![0.0; p]; p];
    let mut meat = vec![vec![0.0; p]; p];
    for ((r, &yi), &mu) in fit.design.rows().zip(&fit.y).zip(&fit.fitted) {
        for a in 0..p {
            for b in 0..p {
                info[a][b] += mu * (1.0 - mu) * r[a] * r[b];
                meat[a][b] += (yi - mu).powi(2) * r[a] * r[b];
            }
        }
    }
    let inverse: Vec<Vec<f64>> = (0..p)
        .map(|k| {
            let mut e = vec![0.0; p];
            e[k] = 1.0;
            gauss_solve(info.clone(), e).unwrap()
        })
        .collect();
    let mut out = vec![vec![0.0; p]; p];
    for a in 0..p {
        for b in 0..p {
            for k in 0..p {
                for l in 0..p {
                    out[a][b] += inverse[a][k] * meat[k][l] * inverse[l][b];
                }
            }
        }
    }
    out
}

#[test]
fn singleton_clusters_give_the_robust_sandwich() {
    let pop = toy_population(&[5, 6, 7], &AGES);
    let y: Vec<f64> = (0..18)
        .map(|i| f64::from(u8::from(i % 3 != 0 || i % 5 == 0)))
        .collect();
    let (_, fit) = fit_on(&pop, &[Auxiliary::Intercept, Auxiliary::ChildAge], &y);
    let clusters: Vec<usize> = (0..18).collect();
    let s = cluster_sandwich(&fit, &clusters, SandwichAdjustment::None).unwrap();
    let hand = hc0_by_hand(&fit);
    for a in 0..2 {
        for b in 0..2 {
            assert_abs_diff_eq!(
                s[(a, b)],
                hand[a][b],
                epsilon = 1e-12 * hand[a][a].abs().max(1.0)
            );
        }
    }
}

#[test]
fn duplicated_clusters_halve_the_covariance() {
    let pop = toy_population(&[5, 6, 7, 6], &AGES);
    let y: Vec<f64> = (0..24)
        .map(|i| f64::from(u8::from((i * 7) % 5 < 3)))
        .collect();
    let villages: Vec<usize> = pop.children().iter().map(|c| c.village_id).collect();
    let cols = vec![Auxiliary::Intercept, Auxiliary::ChildAge];
    let rows: Vec<Vec<f64>> = pop
        .children()
        .iter()
        .map(|c| vec![1.0, f64::from(c.age_months)])
        .collect();
    let once = Design::from_rows(cols.clone(), &rows);
    let twice_rows: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
    let twice = Design::from_rows(cols, &twice_rows);
    let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
    let c2: Vec<usize> = villages
        .iter()
        .copied()
        .chain(villages.iter().map(|v| v + 4))
        .collect();

    let cfg = LogisticConfig::default();
    let f1 = fit_logistic(&once, &y, &cfg).unwrap();
    let f2 = fit_logistic(&twice, &y2, &cfg).unwrap();
    assert_abs_diff_eq!(
        imputation_estimate(&f1, &once),
        imputation_estimate(&f2, &once),
        epsilon = 1e-9
    );

    let s1 = cluster_sandwich(&f1, &villages, SandwichAdjustment::ClusterAdjusted).unwrap();
    let s2 = cluster_sandwich(&f2, &c2, SandwichAdjustment::ClusterAdjusted).unwrap();
    // c goes from 4/3 to 8/7 with twice the clusters.
    let ratio = (8.0 / 7.0) / (4.0 / 3.0) / 2.0;
    for a in 0..2 {
        for b in 0..2 {
            assert_abs_diff_eq!(
                s2[(a, b)],
                ratio * s1[(a, b)],
                epsilon = 1e-6 * s1[(a, a)].abs()
            );
        }
    }
}

#[test]
fn census_sample_reproduces_truth_for_both_methods() {
    let pop = toy_population(&[6, 8, 7, 9, 5], &AGES);
    let n = pop.total_children();
    let y1: Vec<bool> = (0..n).map(|i| (i * 5) % 7 < 4).collect();
    let p_true = as_f64(&y1).iter().sum::<f64>() / n as f64;
    let sample = Sample::from_villages(&pop, &vec![true; n], (0..5).collect());
    let aux = AuxiliaryMatrix::from_population(
        &pop,
        &[
            Auxiliary::Intercept,
            Auxiliary::ChildAge,
            Auxiliary::ChildMale,
        ],
    );
    let opts = EstimatorOptions::default();
    let cal = estimate_calibrated(&pop, &aux, &sample, &y1, &opts).unwrap();
    let imp = estimate_imputation(&pop, &aux, &sample, &y1, &opts).unwrap();
    assert_abs_diff_eq!(cal.p_hat, p_true, epsilon = 1e-12);
    assert_abs_diff_eq!(imp.p_hat, p_true, epsilon = 1e-10);
    assert!(cal.se > 0.0 && imp.se > 0.0);
}

#[test]
fn collinear_auxiliary_is_dropped_and_reported() {
    // Every guardian is female: a zero column, first in the drop order
    // among the columns present.
    let pop = toy_population(&[6, 8, 7, 9, 5], &AGES);
    let n = pop.total_children();
    let y1: Vec<bool> = (0..n).map(|i| (i * 5) % 7 < 4).collect();
    let sample = Sample::from_villages(&pop, &vec![true; n], vec![0, 2, 4]);
    let aux = AuxiliaryMatrix::from_population(
        &pop,
        &[
            Auxiliary::Intercept,
            Auxiliary::ChildAge,
            Auxiliary::GuardianMale,
        ],
    );
    let opts = EstimatorOptions::default();
    let cal = estimate_calibrated(&pop, &aux, &sample, &y1, &opts).unwrap();
    assert_eq!(cal.diagnostics.dropped, vec![Auxiliary::GuardianMale]);
    let imp = estimate_imputation(&pop, &aux, &sample, &y1, &opts).unwrap();
    assert_eq!(imp.diagnostics.dropped, vec![Auxiliary::GuardianMale]);
}

#[test]
fn drops_follow_priority_order() {
    // Village covariates are all zero. Dropping proceeds down the priority
    // list, so child age goes before the degenerate population column.
    let pop = toy_population(&[6, 8, 7, 9, 5], &AGES);
    let n = pop.total_children();
    let y1: Vec<bool> = (0..n).map(|i| (i * 5) % 7 < 4).collect();
    let sample = Sample::from_villages(&pop, &vec![true; n], vec![0, 2, 4]);
    let aux = AuxiliaryMatrix::from_population(
        &pop,
        &[
            Auxiliary::Intercept,
            Auxiliary::Population,
            Auxiliary::ChildAge,
        ],
    );
    let opts = EstimatorOptions::default();
    let cal = estimate_calibrated(&pop, &aux, &sample, &y1, &opts).unwrap();
    assert_eq!(
        cal.diagnostics.dropped,
        vec![Auxiliary::Population, Auxiliary::ChildAge]
    );
    let imp = estimate_imputation(&pop, &aux, &sample, &y1, &opts).unwrap();
    assert_eq!(
        imp.diagnostics.dropped,
        vec![Auxiliary::Population, Auxiliary::ChildAge]
    );
}

#[test]
fn empty_sample_fails_both_methods() {
    let pop = toy_population(&[4, 4, 4], &AGES);
    let sample = Sample::from_villages(&pop, &[false; 12], vec![0, 1]);
    let aux = AuxiliaryMatrix::from_population(&pop, &[Auxiliary::Intercept]);
    let opts = EstimatorOptions::default();
    let y = [true; 12];
    assert_eq!(
        estimate_calibrated(&pop, &aux, &sample, &y, &opts).unwrap_err(),
        EstimationFailure::EmptySample
    );
    assert_eq!(
        estimate_imputation(&pop, &aux, &sample, &y, &opts).unwrap_err(),
        EstimationFailure::EmptySample
    );
}
