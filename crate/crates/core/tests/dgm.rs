mod common;

use anchorsim::dgm::{
    attendance_rate, draw_sample, generate_attendance, generate_followup, logit, tune_beta0,
    tune_gamma0, OutcomeCoefficients, ResponseRateDefinition, SelectionCoefficients, TuningConfig,
};
use anchorsim::population::{
    build_census, synthesize_population, Population, PopulationConfig, Village,
};
use anchorsim::rng::{Role, Streams};
use approx::assert_abs_diff_eq;
use common::toy_population;

fn census(seed: u64) -> Population {
    let cfg = PopulationConfig {
        rng_seed: seed,
        ..PopulationConfig::default()
    };
    build_census(&cfg, &OutcomeCoefficients::default())
        .unwrap()
        .0
}

#[test]
fn mean_child_age_is_near_eighteen_months() {
    for seed in [1, 2, 3] {
        let pop = synthesize_population(&PopulationConfig {
            rng_seed: seed,
            ..PopulationConfig::default()
        })
        .unwrap();
        let n = pop.total_children();
        assert!((8_000..11_000).contains(&n), "N = {n}");
        let mean = pop
            .children()
            .iter()
            .map(|c| f64::from(c.age_months))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 18.0).abs() <= 0.2, "seed {seed}: mean age {mean}");
    }
}

#[test]
fn baseline_rate_stays_near_target_across_seeds() {
    for seed in 1..=20 {
        let rate = census(seed).baseline_rate();
        assert!(
            (0.70..=0.76).contains(&rate),
            "seed {seed}: baseline rate {rate}"
        );
    }
}

#[test]
fn null_outcome_model_gives_even_odds() {
    let pop = toy_population(&[500; 8], &[12, 18, 24]);
    let streams = Streams::new(11);
    let mut total = 0.0;
    for rep in 0..20 {
        total += generate_followup(
            &pop,
            &OutcomeCoefficients::zero(),
            &mut streams.stream(0, rep, Role::Outcomes),
        )
        .p_true;
    }
    assert_abs_diff_eq!(total / 20.0, 0.5, epsilon = 0.005);
}

#[test]
fn village_offset_passes_through() {
    let mut villages: Vec<Village> = toy_population(&[4000, 10], &[18]).villages().to_vec();
    villages[0].baseline_logodds = logit(0.9);
    let children = toy_population(&[4000, 10], &[18]).children().to_vec();
    let pop = Population::new(villages, children).unwrap();
    let f = generate_followup(
        &pop,
        &OutcomeCoefficients::zero(),
        &mut Streams::new(2).stream(0, 0, Role::Outcomes),
    );
    let rate = f.y1[..4000].iter().filter(|&&y| y).count() as f64 / 4000.0;
    // Binomial sd is about 0.0047.
    assert!((rate - 0.9).abs() < 0.02, "rate {rate}");
}

#[test]
fn tuned_intercept_hits_target_prevalence() {
    let pop = census(1);
    let streams = Streams::new(5);
    let oc = OutcomeCoefficients::default();
    let t = tune_beta0(&pop, &oc, 0.73, 20, &streams).unwrap();
    let tuned = OutcomeCoefficients {
        beta0: t.value,
        ..oc
    };
    let mean = (0..100)
        .map(|rep| {
            generate_followup(&pop, &tuned, &mut streams.stream(1, rep, Role::Outcomes)).p_true
        })
        .sum::<f64>()
        / 100.0;
    assert!((mean - 0.73).abs() <= 0.01, "mean p_true {mean}");
}

#[test]
fn odds_ratio_shifts_attendance_of_vaccinated_children() {
    let pop = toy_population(&[5000; 4], &[18]);
    let n = pop.total_children();
    let y1: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let sc = SelectionCoefficients {
        xi: 1.5,
        ..SelectionCoefficients::zero()
    };
    let a = generate_attendance(
        &pop,
        &y1,
        &sc,
        &mut Streams::new(3).stream(0, 0, Role::Attendance),
    );
    let rate = |want: bool| {
        let idx: Vec<usize> = (0..n).filter(|&i| y1[i] == want).collect();
        idx.iter().filter(|&&i| a[i]).count() as f64 / idx.len() as f64
    };
    // Each group has 10,000 children: sd about 0.005.
    assert!((rate(true) - 0.6).abs() < 0.015);
    assert!((rate(false) - 0.5).abs() < 0.015);
}

#[test]
fn quarter_of_census_villages_is_ninety_five() {
    let pop = census(1);
    let attended = vec![true; pop.total_children()];
    let s = draw_sample(
        &pop,
        &attended,
        0.25,
        &mut Streams::new(1).stream(0, 0, Role::VillageSampling),
    )
    .unwrap();
    assert_eq!(s.m(), 95);
    assert_eq!(
        s.n_respondents(),
        s.sampled_villages
            .iter()
            .map(|&j| pop.village_range(j).len())
            .sum::<usize>()
    );
}

#[test]
fn selection_tuning_reproduces_target_on_resimulation() {
    let pop = census(1);
    let oc = OutcomeCoefficients::default();
    let sc = SelectionCoefficients::default();
    let streams = Streams::new(9);
    let cfg = TuningConfig::default();
    let t = tune_gamma0(&pop, &oc, &sc, 0.65, &cfg, &streams).unwrap();
    assert!(t.iterations <= 30, "{} iterations", t.iterations);
    let tuned = SelectionCoefficients {
        gamma0: t.value,
        ..sc
    };
    let reps = 100;
    let mean = (0..reps)
        .map(|rep| {
            let f = generate_followup(&pop, &oc, &mut streams.stream(2, rep, Role::Outcomes));
            let a = generate_attendance(
                &pop,
                &f.y1,
                &tuned,
                &mut streams.stream(2, rep, Role::Attendance),
            );
            attendance_rate(&pop, &a, ResponseRateDefinition::VillageMean)
        })
        .sum::<f64>()
        / f64::from(reps);
    assert!((mean - 0.65).abs() <= 0.01, "re-simulated rate {mean}");
}

#[test]
fn homogeneous_selection_tunes_to_closed_form() {
    let pop = toy_population(&[50; 20], &[18]);
    let oc = OutcomeCoefficients::zero();
    let sc = SelectionCoefficients::zero();
    let streams = Streams::new(4);
    let cfg = TuningConfig::default();
    let half = tune_gamma0(&pop, &oc, &sc, 0.5, &cfg, &streams).unwrap();
    assert!(half.value.abs() <= 0.02);
    let high = tune_gamma0(&pop, &oc, &sc, 0.8, &cfg, &streams).unwrap();
    assert!((high.value - 0.8f64.ln() + 0.2f64.ln()).abs() <= 0.02);
}
