//! Follow-up data generation for one replicate: vaccination outcomes,
//! attendance at the village training, and the two-stage sample.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bisect::bisect_increasing;
use crate::error::{Error, Result};
use crate::population::{
    expected_rate, fixed_predictor, icc_to_variance, Child, Population, Village,
};
use crate::rng::{Role, Streams};

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Log-odds coefficients of the vaccination model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeCoefficients {
    pub beta0: f64,
    pub beta_pop: f64,
    pub beta_dist: f64,
    pub beta_child_age: f64,
    pub beta_guardian_age: f64,
    pub beta_child_male: f64,
    pub beta_guardian_male: f64,
    /// Village random-intercept variance.
    pub sigma2: f64,
}

impl Default for OutcomeCoefficients {
    /// Census-fitted vaccination model with village ICC of 1/3.
    fn default() -> Self {
        OutcomeCoefficients {
            beta0: 1.38,
            beta_pop: 0.06,
            beta_dist: -0.08,
            beta_child_age: 0.01,
            beta_guardian_age: 0.00,
            beta_child_male: 0.07,
            beta_guardian_male: -0.24,
            sigma2: icc_to_variance(1.0 / 3.0).expect("valid icc"),
        }
    }
}

impl OutcomeCoefficients {
    pub fn zero() -> Self {
        OutcomeCoefficients {
            beta0: 0.0,
            beta_pop: 0.0,
            beta_dist: 0.0,
            beta_child_age: 0.0,
            beta_guardian_age: 0.0,
            beta_child_male: 0.0,
            beta_guardian_male: 0.0,
            sigma2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta0,
            self.beta_pop,
            self.beta_dist,
            self.beta_child_age,
            self.beta_guardian_age,
            self.beta_child_male,
            self.beta_guardian_male,
            self.sigma2,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("outcome coefficients must be finite".into()));
        }
        if self.sigma2 < 0.0 {
            return Err(Error::Config("sigma2 must be non-negative".into()));
        }
        Ok(())
    }

    /// Covariate part of the linear predictor, without intercept or offset.
    #[inline]
    pub fn fixed_effects(&self, v: &Village, c: &Child) -> f64 {
        self.beta_pop * v.population_scaled
            + self.beta_dist * v.distance_km
            + self.beta_child_age * f64::from(c.age_months)
            + self.beta_guardian_age * c.guardian_age_yr
            + self.beta_child_male * f64::from(u8::from(c.male))
            + self.beta_guardian_male * f64::from(u8::from(c.guardian_male))
    }
}

/// Log-odds coefficients of the attendance (selection) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionCoefficients {
    pub gamma0: f64,
    pub gamma_pop: f64,
    pub gamma_dist: f64,
    pub gamma_child_age: f64,
    pub gamma_guardian_age: f64,
    pub gamma_child_male: f64,
    pub gamma_guardian_male: f64,
    /// Village random-intercept variance.
    pub tau2: f64,
    /// Odds ratio of attendance for vaccinated versus unvaccinated children.
    pub xi: f64,
}

impl Default for SelectionCoefficients {
    /// Census-fitted attendance model with selection ICC of 1/3.
    fn default() -> Self {
        SelectionCoefficients {
            gamma0: 0.15,
            gamma_pop: -0.33,
            gamma_dist: -0.08,
            gamma_child_age: -0.01,
            gamma_guardian_age: 0.01,
            gamma_child_male: -0.02,
            gamma_guardian_male: -0.01,
            tau2: icc_to_variance(1.0 / 3.0).expect("valid icc"),
            xi: 1.0,
        }
    }
}

impl SelectionCoefficients {
    pub fn zero() -> Self {
        SelectionCoefficients {
            gamma0: 0.0,
            gamma_pop: 0.0,
            gamma_dist: 0.0,
            gamma_child_age: 0.0,
            gamma_guardian_age: 0.0,
            gamma_child_male: 0.0,
            gamma_guardian_male: 0.0,
            tau2: 0.0,
            xi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gamma0,
            self.gamma_pop,
            self.gamma_dist,
            self.gamma_child_age,
            self.gamma_guardian_age,
            self.gamma_child_male,
            self.gamma_guardian_male,
            self.tau2,
            self.xi,
        ];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(
                "selection coefficients must be finite".into(),
            ));
        }
        if self.tau2 < 0.0 {
            return Err(Error::Config("tau2 must be non-negative".into()));
        }
        if !(self.xi > 0.0) {
            return Err(Error::Config("xi must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn fixed_effects(&self, v: &Village, c: &Child) -> f64 {
        self.gamma_pop * v.population_scaled
            + self.gamma_dist * v.distance_km
            + self.gamma_child_age * f64::from(c.age_months)
            + self.gamma_guardian_age * c.guardian_age_yr
            + self.gamma_child_male * f64::from(u8::from(c.male))
            + self.gamma_guardian_male * f64::from(u8::from(c.guardian_male))
    }
}

/// One cell of the factor grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ordinal: u32,
    pub scenario_id: String,
    pub village_fraction: f64,
    pub response_rate_target: f64,
    pub xi: f64,
    pub gamma0_tuned: f64,
}

impl Scenario {
    pub fn make_id(fraction: f64, rate: f64, xi: f64) -> String {
        format!("f{fraction:.2}_r{rate:.2}_x{xi:.2}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Followup {
    pub y1: Vec<bool>,
    /// Finite-population proportion vaccinated over all N children.
    pub p_true: f64,
}

/// Realized two-stage sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Sampled village ids in ascending order.
    pub sampled_villages: Vec<usize>,
    /// Respondent child ids, ascending (hence grouped by village).
    pub respondents: Vec<usize>,
    /// For each respondent, its position in `sampled_villages`.
    pub respondent_slot: Vec<usize>,
    /// Respondent count per sampled village (v_j).
    pub respondents_per_village: Vec<usize>,
}

impl Sample {
    /// Builds a sample from chosen villages: respondents are the attendees
    /// in those villages.
    pub fn from_villages(pop: &Population, attended: &[bool], mut villages: Vec<usize>) -> Self {
        villages.sort_unstable();
        villages.dedup();
        let mut respondents = Vec::new();
        let mut respondent_slot = Vec::new();
        let mut per_village = Vec::with_capacity(villages.len());
        for (slot, &j) in villages.iter().enumerate() {
            let before = respondents.len();
            for i in pop.village_range(j) {
                if attended[i] {
                    respondents.push(i);
                    respondent_slot.push(slot);
                }
            }
            per_village.push(respondents.len() - before);
        }
        Sample {
            sampled_villages: villages,
            respondents,
            respondent_slot,
            respondents_per_village: per_village,
        }
    }

    pub fn m(&self) -> usize {
        self.sampled_villages.len()
    }

    pub fn n_respondents(&self) -> usize {
        self.respondents.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub y1: Vec<bool>,
    pub attended: Vec<bool>,
    pub sample: Sample,
    pub p_true: f64,
}

fn draw_intercepts<R: Rng>(n: usize, variance: f64, rng: &mut R) -> Vec<f64> {
    if variance <= 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Per-child follow-up linear predictor without the village intercept:
/// intercept, covariates and the village baseline log-odds offset.
pub fn followup_predictor(pop: &Population, oc: &OutcomeCoefficients) -> Vec<f64> {
    let mut eta = fixed_predictor(pop, oc);
    for (e, c) in eta.iter_mut().zip(pop.children()) {
        *e += pop.villages()[c.village_id].baseline_logodds;
    }
    eta
}

/// Draws fresh village intercepts and follow-up vaccination for every child.
pub fn generate_followup<R: Rng>(
    pop: &Population,
    oc: &OutcomeCoefficients,
    rng: &mut R,
) -> Followup {
    let eta = followup_predictor(pop, oc);
    generate_followup_with(pop, &eta, oc.sigma2, rng)
}

pub(crate) fn generate_followup_with<R: Rng>(
    pop: &Population,
    eta: &[f64],
    sigma2: f64,
    rng: &mut R,
) -> Followup {
    let alphas = draw_intercepts(pop.n_villages(), sigma2, rng);
    let mut vaccinated = 0usize;
    let y1: Vec<bool> = pop
        .children()
        .iter()
        .zip(eta)
        .map(|(c, &e)| {
            let y = rng.random::<f64>() < expit(e + alphas[c.village_id]);
            vaccinated += usize::from(y);
            y
        })
        .collect();
    Followup {
        y1,
        p_true: vaccinated as f64 / pop.total_children() as f64,
    }
}

/// Draws fresh village selection intercepts and attendance for every child.
pub fn generate_attendance<R: Rng>(
    pop: &Population,
    y1: &[bool],
    sc: &SelectionCoefficients,
    rng: &mut R,
) -> Vec<bool> {
    let mus = draw_intercepts(pop.n_villages(), sc.tau2, rng);
    let log_xi = sc.xi.ln();
    pop.children()
        .iter()
        .zip(y1)
        .map(|(c, &y)| {
            let v = &pop.villages()[c.village_id];
            let lp = sc.gamma0
                + sc.fixed_effects(v, c)
                + mus[c.village_id]
                + if y { log_xi } else { 0.0 };
            rng.random::<f64>() < expit(lp)
        })
        .collect()
}

/// Number of villages sampled for a fraction: `round(fraction · M)`.
pub fn villages_to_sample(fraction: f64, n_villages: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "village fraction {fraction} must lie in (0, 1]"
        )));
    }
    let m = (fraction * n_villages as f64).round() as usize;
    if m == 0 {
        return Err(Error::Config(format!(
            "village fraction {fraction} of {n_villages} villages samples no village"
        )));
    }
    Ok(m.min(n_villages))
}

/// Simple random sample of villages without replacement; respondents are
/// the attendees in sampled villages. Villages without attendees stay in.
pub fn draw_sample<R: Rng>(
    pop: &Population,
    attended: &[bool],
    fraction: f64,
    rng: &mut R,
) -> Result<Sample> {
    let m = villages_to_sample(fraction, pop.n_villages())?;
    let villages = index::sample(rng, pop.n_villages(), m).into_vec();
    Ok(Sample::from_villages(pop, attended, villages))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResponseRateDefinition {
    /// Unweighted mean over villages of the per-village attendance proportion.
    #[default]
    VillageMean,
    /// Proportion of all children attending.
    ChildWeighted,
}

/// Realized response rate of an attendance vector.
pub fn attendance_rate(pop: &Population, attended: &[bool], def: ResponseRateDefinition) -> f64 {
    let probs: Vec<f64> = attended.iter().map(|&a| f64::from(u8::from(a))).collect();
    rate_from_probs(pop, &probs, def)
}

fn rate_from_probs(pop: &Population, probs: &[f64], def: ResponseRateDefinition) -> f64 {
    match def {
        ResponseRateDefinition::ChildWeighted => probs.iter().sum::<f64>() / probs.len() as f64,
        ResponseRateDefinition::VillageMean => {
            let m = pop.n_villages();
            (0..m)
                .map(|j| {
                    let r = pop.village_range(j);
                    let n = r.len() as f64;
                    probs[r].iter().sum::<f64>() / n
                })
                .sum::<f64>()
                / m as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    /// Monte Carlo draws of outcomes and intercepts averaged per evaluation.
    pub draws: usize,
    pub bracket: [f64; 2],
    /// Maximum allowed distance between achieved and target rate.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub rate_definition: ResponseRateDefinition,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            draws: 50,
            bracket: [-10.0, 10.0],
            tolerance: 0.005,
            max_iterations: 60,
            rate_definition: ResponseRateDefinition::VillageMean,
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws < 1 {
            return Err(Error::Config("tuning draws must be positive".into()));
        }
        if !(self.bracket[0] < self.bracket[1]) {
            return Err(Error::Config("tuning bracket must be ordered".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tuning tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TunedIntercept {
    pub value: f64,
    pub achieved_rate: f64,
    pub iterations: usize,
}

/// Tunes the selection intercept with common random numbers: the same
/// outcome and intercept draws are reused for every candidate γ₀ and
/// every (target, ξ) pair, so the tuned curve is deterministic and
/// monotone in γ₀.
pub struct SelectionTuner<'a> {
    pop: &'a Population,
    cfg: TuningConfig,
    /// Per draw: per-child selection predictor without γ₀ and ξ terms.
    base: Vec<Vec<f64>>,
    y1: Vec<Vec<bool>>,
}

impl<'a> SelectionTuner<'a> {
    pub fn new(
        pop: &'a Population,
        oc: &OutcomeCoefficients,
        sc: &SelectionCoefficients,
        cfg: &TuningConfig,
        streams: &Streams,
    ) -> Result<Self> {
        cfg.validate()?;
        oc.validate()?;
        sc.validate()?;
        let eta = followup_predictor(pop, oc);
        let fixed: Vec<f64> = pop
            .children()
            .iter()
            .map(|c| sc.fixed_effects(&pop.villages()[c.village_id], c))
            .collect();
        let mut base = Vec::with_capacity(cfg.draws);
        let mut y1 = Vec::with_capacity(cfg.draws);
        for d in 0..cfg.draws as u32 {
            let mut rng = streams.stream(0, d, Role::SelectionTuning);
            let follow = generate_followup_with(pop, &eta, oc.sigma2, &mut rng);
            let mus = draw_intercepts(pop.n_villages(), sc.tau2, &mut rng);
            base.push(
                pop.children()
                    .iter()
                    .zip(&fixed)
                    .map(|(c, f)| f + mus[c.village_id])
                    .collect(),
            );
            y1.push(follow.y1);
        }
        Ok(SelectionTuner {
            pop,
            cfg: cfg.clone(),
            base,
            y1,
        })
    }

    /// Expected response rate at intercept `gamma0` and odds ratio `xi`,
    /// averaged over the stored draws.
    pub fn expected_rate(&self, gamma0: f64, xi: f64) -> f64 {
        let log_xi = xi.ln();
        let mut probs = vec![0.0; self.pop.total_children()];
        let mut total = 0.0;
        for (base, y1) in self.base.iter().zip(&self.y1) {
            for ((p, b), &y) in probs.iter_mut().zip(base).zip(y1) {
                *p = expit(gamma0 + b + if y { log_xi } else { 0.0 });
            }
            total += rate_from_probs(self.pop, &probs, self.cfg.rate_definition);
        }
        total / self.base.len() as f64
    }

    pub fn tune(&self, target: f64, xi: f64) -> Result<TunedIntercept> {
        if !(target > 0.0 && target < 1.0) {
            return Err(Error::Domain(format!(
                "target response rate {target} must lie in (0, 1)"
            )));
        }
        if !(xi > 0.0) {
            return Err(Error::Domain(format!("odds ratio {xi} must be positive")));
        }
        let [lo, hi] = self.cfg.bracket;
        let result = bisect_increasing(
            |g| self.expected_rate(g, xi),
            lo,
            hi,
            target,
            1e-6,
            1e-7,
            self.cfg.max_iterations,
        );
        match result {
            Ok(b) if (b.value - target).abs() <= self.cfg.tolerance => Ok(TunedIntercept {
                value: b.x,
                achieved_rate: b.value,
                iterations: b.iterations,
            }),
            Ok(b) => Err(Error::Tuning {
                what: "selection intercept",
                target,
                lo: b.x,
                hi: b.x,
                rate_lo: b.value,
                rate_hi: b.value,
            }),
            Err(e) => Err(Error::Tuning {
                what: "selection intercept",
                target,
                lo,
                hi,
                rate_lo: e.value_lo,
                rate_hi: e.value_hi,
            }),
        }
    }
}

/// Tunes γ₀ for one target rate and the odds ratio in `sc.xi`.
pub fn tune_gamma0(
    pop: &Population,
    oc: &OutcomeCoefficients,
    sc: &SelectionCoefficients,
    target: f64,
    cfg: &TuningConfig,
    streams: &Streams,
) -> Result<TunedIntercept> {
    SelectionTuner::new(pop, oc, sc, cfg, streams)?.tune(target, sc.xi)
}

/// Tunes the follow-up intercept β₀ so expected prevalence, averaged over
/// `draws` village-intercept draws, equals `target`.
pub fn tune_beta0(
    pop: &Population,
    oc: &OutcomeCoefficients,
    target: f64,
    draws: usize,
    streams: &Streams,
) -> Result<TunedIntercept> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Domain(format!(
            "target prevalence {target} must lie in (0, 1)"
        )));
    }
    let mut base = oc.clone();
    base.beta0 = 0.0;
    let eta = followup_predictor(pop, &base);
    let alphas: Vec<Vec<f64>> = (0..draws.max(1) as u32)
        .map(|d| {
            draw_intercepts(
                pop.n_villages(),
                oc.sigma2,
                &mut streams.stream(0, d, Role::OutcomeTuning),
            )
        })
        .collect();
    let rate = |b0: f64| {
        let shifted: Vec<f64> = eta.iter().map(|e| e + b0).collect();
        alphas
            .iter()
            .map(|a| expected_rate(pop, &shifted, a))
            .sum::<f64>()
            / alphas.len() as f64
    };
    match bisect_increasing(rate, -15.0, 15.0, target, 1e-7, 1e-7, 80) {
        Ok(b) => Ok(TunedIntercept {
            value: b.x,
            achieved_rate: b.value,
            iterations: b.iterations,
        }),
        Err(e) => Err(Error::Tuning {
            what: "follow-up intercept",
            target,
            lo: -15.0,
            hi: 15.0,
            rate_lo: e.value_lo,
            rate_hi: e.value_hi,
        }),
    }
}
