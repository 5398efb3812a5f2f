//! Synthetic census: villages, children, and baseline vaccination.
//!
//! The census plays the role of the probabilistic baseline survey that
//! anchors every follow-up estimate. It is synthesized from marginal
//! targets and then held fixed while follow-up outcomes and attendance
//! are redrawn for each replicate.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::bisect::bisect_increasing;
use crate::dgm::{expit, OutcomeCoefficients};
use crate::error::{Error, Result};
use crate::rng::{Role, Streams};

/// Variance of the standard logistic distribution, `π²/3`.
pub const LOGISTIC_VARIANCE: f64 = PI * PI / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_villages: usize,
    pub min_children_per_village: u32,
    pub mean_children_per_village: f64,
    /// Negative-binomial size parameter; larger is less overdispersed.
    pub village_size_dispersion: f64,
    pub distance_mean_km: f64,
    pub distance_max_km: f64,
    pub child_age_range_months: [u32; 2],
    pub child_male_prob: f64,
    pub guardian_male_prob: f64,
    pub guardian_age_mean_yr: f64,
    pub guardian_age_sd_yr: f64,
    pub guardian_age_range_yr: [f64; 2],
    pub baseline_target_rate: f64,
    pub icc_vaccination: f64,
    pub rng_seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_villages: 381,
            min_children_per_village: 5,
            mean_children_per_village: 25.0,
            village_size_dispersion: 3.0,
            distance_mean_km: 5.0,
            distance_max_km: 30.0,
            child_age_range_months: [12, 24],
            child_male_prob: 0.459,
            guardian_male_prob: 0.070,
            guardian_age_mean_yr: 29.4,
            guardian_age_sd_yr: 9.68,
            guardian_age_range_yr: [15.0, 86.0],
            baseline_target_rate: 0.73,
            icc_vaccination: 1.0 / 3.0,
            rng_seed: 1,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {p} is not a probability")))
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_villages == 0 {
            return Err(Error::Config("n_villages must be positive".into()));
        }
        if self.min_children_per_village == 0 {
            return Err(Error::Config(
                "min_children_per_village must be positive".into(),
            ));
        }
        if !(self.mean_children_per_village >= f64::from(self.min_children_per_village)) {
            return Err(Error::Config(
                "mean_children_per_village must be at least min_children_per_village".into(),
            ));
        }
        if !(self.village_size_dispersion > 0.0) {
            return Err(Error::Config(
                "village_size_dispersion must be positive".into(),
            ));
        }
        if !(self.distance_mean_km > 0.0 && self.distance_max_km > 0.0) {
            return Err(Error::Config("distance parameters must be positive".into()));
        }
        let [a_lo, a_hi] = self.child_age_range_months;
        if a_lo > a_hi || a_hi > 255 {
            return Err(Error::Config(
                "child_age_range_months must be ordered and < 256".into(),
            ));
        }
        let [g_lo, g_hi] = self.guardian_age_range_yr;
        if !(g_lo < g_hi) {
            return Err(Error::Config(
                "guardian_age_range_yr must be ordered".into(),
            ));
        }
        if !(self.guardian_age_sd_yr > 0.0) {
            return Err(Error::Config("guardian_age_sd_yr must be positive".into()));
        }
        check_prob("child_male_prob", self.child_male_prob)?;
        check_prob("guardian_male_prob", self.guardian_male_prob)?;
        if !(self.baseline_target_rate > 0.0 && self.baseline_target_rate < 1.0) {
            return Err(Error::Config(
                "baseline_target_rate must lie in (0, 1)".into(),
            ));
        }
        if !(self.icc_vaccination > 0.0 && self.icc_vaccination < 1.0) {
            return Err(Error::Config("icc_vaccination must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Random-intercept variance giving intra-cluster correlation `icc` on the
/// latent logistic scale.
pub fn icc_to_variance(icc: f64) -> Result<f64> {
    if !(icc > 0.0 && icc < 1.0) {
        return Err(Error::Domain(format!("icc must lie in (0, 1), got {icc}")));
    }
    Ok(icc * LOGISTIC_VARIANCE / (1.0 - icc))
}

/// Intra-cluster correlation implied by random-intercept variance `variance`.
pub fn variance_to_icc(variance: f64) -> f64 {
    variance / (variance + LOGISTIC_VARIANCE)
}

/// Continuity-corrected village log-odds, finite for every `0 ≤ y ≤ k`.
pub fn continuity_logodds(vaccinated: u32, children: u32) -> f64 {
    let y = f64::from(vaccinated);
    let k = f64::from(children);
    ((y + 0.5) / (k - y + 0.5)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Village {
    pub id: usize,
    pub n_children: u32,
    /// Village population total, centred and scaled across villages.
    pub population_scaled: f64,
    pub distance_km: f64,
    pub baseline_vaccinated: u32,
    pub baseline_logodds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Child {
    pub id: usize,
    pub village_id: usize,
    pub age_months: u8,
    pub male: bool,
    pub guardian_age_yr: f64,
    pub guardian_male: bool,
}

/// Finite population. Children are stored contiguously by village.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    villages: Vec<Village>,
    children: Vec<Child>,
    offsets: Vec<usize>,
}

impl Population {
    /// Assembles a population, checking that children are grouped by
    /// village in village order and that counts agree.
    pub fn new(villages: Vec<Village>, children: Vec<Child>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(villages.len() + 1);
        offsets.push(0);
        for (j, v) in villages.iter().enumerate() {
            if v.id != j {
                return Err(Error::Input(format!(
                    "village at position {j} has id {}",
                    v.id
                )));
            }
            if v.baseline_vaccinated > v.n_children {
                return Err(Error::Input(format!(
                    "village {j}: baseline_vaccinated {} exceeds n_children {}",
                    v.baseline_vaccinated, v.n_children
                )));
            }
            offsets.push(offsets[j] + v.n_children as usize);
        }
        if *offsets.last().unwrap() != children.len() {
            return Err(Error::Input(format!(
                "village sizes sum to {} but there are {} children",
                offsets.last().unwrap(),
                children.len()
            )));
        }
        for (j, w) in offsets.windows(2).enumerate() {
            for (i, child) in children[w[0]..w[1]].iter().enumerate() {
                if child.village_id != j {
                    return Err(Error::Input(format!(
                        "child {} listed under village {j} references village {}",
                        child.id, child.village_id
                    )));
                }
                if child.id != w[0] + i {
                    return Err(Error::Input(format!(
                        "child ids must be 0..N in order, found {}",
                        child.id
                    )));
                }
            }
        }
        Ok(Population {
            villages,
            children,
            offsets,
        })
    }

    pub fn villages(&self) -> &[Village] {
        &self.villages
    }

    pub fn children(&self) -> &[Child] {
        &self.children
    }

    pub fn n_villages(&self) -> usize {
        self.villages.len()
    }

    /// Total number of children, N.
    pub fn total_children(&self) -> usize {
        self.children.len()
    }

    /// Child index range of village `j`.
    pub fn village_range(&self, j: usize) -> std::ops::Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn village_children(&self, j: usize) -> &[Child] {
        &self.children[self.village_range(j)]
    }

    pub fn village_of(&self, child: usize) -> &Village {
        &self.villages[self.children[child].village_id]
    }

    /// Baseline vaccination rate over all children.
    pub fn baseline_rate(&self) -> f64 {
        let vaccinated: u64 = self
            .villages
            .iter()
            .map(|v| u64::from(v.baseline_vaccinated))
            .sum();
        vaccinated as f64 / self.total_children() as f64
    }

    /// Writes one row per child with village attributes joined.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in self.dump_rows() {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub(crate) fn dump_rows(&self) -> impl Iterator<Item = PopulationRow> + '_ {
        self.children.iter().map(move |c| {
            let v = &self.villages[c.village_id];
            PopulationRow {
                child_id: c.id,
                village_id: c.village_id,
                age_months: c.age_months,
                male: u8::from(c.male),
                guardian_age_yr: c.guardian_age_yr,
                guardian_male: u8::from(c.guardian_male),
                village_n_children: v.n_children,
                population_scaled: v.population_scaled,
                distance_km: v.distance_km,
                baseline_vaccinated: v.baseline_vaccinated,
                baseline_logodds: v.baseline_logodds,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub child_id: usize,
    pub village_id: usize,
    pub age_months: u8,
    pub male: u8,
    pub guardian_age_yr: f64,
    pub guardian_male: u8,
    pub village_n_children: u32,
    pub population_scaled: f64,
    pub distance_km: f64,
    pub baseline_vaccinated: u32,
    pub baseline_logodds: f64,
}

fn draw_village_size<R: Rng>(cfg: &PopulationConfig, rng: &mut R) -> u32 {
    // Gamma-Poisson mixture gives a negative binomial with the configured mean.
    let r = cfg.village_size_dispersion;
    let gamma =
        Gamma::new(r, cfg.mean_children_per_village / r).expect("validated gamma parameters");
    loop {
        let lambda: f64 = gamma.sample(rng);
        if !(lambda > 0.0) {
            continue;
        }
        let n = Poisson::new(lambda).expect("positive rate").sample(rng) as u32;
        if n >= cfg.min_children_per_village {
            return n;
        }
    }
}

fn draw_truncated_exp<R: Rng>(mean: f64, max: f64, rng: &mut R) -> f64 {
    let exp = Exp::new(1.0 / mean).expect("positive rate");
    loop {
        let d: f64 = exp.sample(rng);
        if d <= max {
            return d;
        }
    }
}

fn draw_truncated_normal<R: Rng>(mean: f64, sd: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    let normal = Normal::new(mean, sd).expect("positive sd");
    loop {
        let x: f64 = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

/// Synthesizes villages and children. Baseline counts are left at zero;
/// see [`generate_baseline`].
pub fn synthesize_population(cfg: &PopulationConfig) -> Result<Population> {
    cfg.validate()?;
    let streams = Streams::new(cfg.rng_seed);
    let mut size_rng = streams.stream(0, 0, Role::VillageSizes);
    let mut village_rng = streams.stream(0, 0, Role::VillageCovariates);
    let mut child_rng = streams.stream(0, 0, Role::ChildCovariates);

    let sizes: Vec<u32> = (0..cfg.n_villages)
        .map(|_| draw_village_size(cfg, &mut size_rng))
        .collect();

    // Total population is roughly proportional to the number of young
    // children, with log-normal noise; it enters models only after scaling.
    let noise = Normal::<f64>::new(0.0, 0.25).expect("valid normal");
    let raw_pop: Vec<f64> = sizes
        .iter()
        .map(|&n| f64::from(n) / 0.04 * noise.sample(&mut village_rng).exp())
        .collect();
    let mean = raw_pop.iter().sum::<f64>() / raw_pop.len() as f64;
    let sd = if raw_pop.len() > 1 {
        (raw_pop.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (raw_pop.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };

    let mut villages = Vec::with_capacity(cfg.n_villages);
    let mut children = Vec::new();
    let [age_lo, age_hi] = cfg.child_age_range_months;
    let [g_lo, g_hi] = cfg.guardian_age_range_yr;
    for (j, &n) in sizes.iter().enumerate() {
        let distance_km =
            draw_truncated_exp(cfg.distance_mean_km, cfg.distance_max_km, &mut village_rng);
        villages.push(Village {
            id: j,
            n_children: n,
            population_scaled: if sd > 0.0 {
                (raw_pop[j] - mean) / sd
            } else {
                0.0
            },
            distance_km,
            baseline_vaccinated: 0,
            baseline_logodds: 0.0,
        });
        for _ in 0..n {
            let id = children.len();
            children.push(Child {
                id,
                village_id: j,
                age_months: child_rng.random_range(age_lo..=age_hi) as u8,
                male: child_rng.random_bool(cfg.child_male_prob),
                guardian_age_yr: draw_truncated_normal(
                    cfg.guardian_age_mean_yr,
                    cfg.guardian_age_sd_yr,
                    g_lo,
                    g_hi,
                    &mut child_rng,
                ),
                guardian_male: child_rng.random_bool(cfg.guardian_male_prob),
            });
        }
    }
    Population::new(villages, children)
}

/// Linear predictor of every child under `coeffs`, excluding village
/// intercepts and offsets.
pub fn fixed_predictor(pop: &Population, coeffs: &OutcomeCoefficients) -> Vec<f64> {
    pop.children()
        .iter()
        .map(|c| coeffs.beta0 + coeffs.fixed_effects(&pop.villages()[c.village_id], c))
        .collect()
}

fn draw_intercepts<R: Rng>(n: usize, variance: f64, rng: &mut R) -> Vec<f64> {
    if variance <= 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Expected vaccination rate over all children given the linear predictor
/// and one set of village intercepts.
pub fn expected_rate(pop: &Population, predictor: &[f64], intercepts: &[f64]) -> f64 {
    let total: f64 = pop
        .children()
        .iter()
        .zip(predictor)
        .map(|(c, &eta)| expit(eta + intercepts[c.village_id]))
        .sum();
    total / pop.total_children() as f64
}

/// Draws baseline vaccination for every child and fills the village counts
/// and continuity-corrected log-odds.
pub fn generate_baseline<R: Rng>(
    pop: &Population,
    coeffs: &OutcomeCoefficients,
    rng: &mut R,
) -> Result<Population> {
    coeffs.validate()?;
    let alphas = draw_intercepts(pop.n_villages(), coeffs.sigma2, rng);
    draw_baseline(pop, &fixed_predictor(pop, coeffs), &alphas, rng)
}

fn draw_baseline<R: Rng>(
    pop: &Population,
    predictor: &[f64],
    alphas: &[f64],
    rng: &mut R,
) -> Result<Population> {
    let mut villages = pop.villages().to_vec();
    for (j, village) in villages.iter_mut().enumerate() {
        let mut vaccinated = 0u32;
        for i in pop.village_range(j) {
            if rng.random::<f64>() < expit(predictor[i] + alphas[j]) {
                vaccinated += 1;
            }
        }
        village.baseline_vaccinated = vaccinated;
        village.baseline_logodds = continuity_logodds(vaccinated, village.n_children);
    }
    Population::new(villages, pop.children().to_vec())
}

/// Tunes the baseline intercept so the expected census rate given the
/// village intercepts `alphas` matches `target`.
pub fn tune_baseline_intercept(
    pop: &Population,
    coeffs: &OutcomeCoefficients,
    alphas: &[f64],
    target: f64,
) -> Result<f64> {
    let mut base = coeffs.clone();
    base.beta0 = 0.0;
    let predictor = fixed_predictor(pop, &base);
    let rate = |beta0: f64| {
        let shifted: Vec<f64> = predictor.iter().map(|p| p + beta0).collect();
        expected_rate(pop, &shifted, alphas)
    };
    match bisect_increasing(rate, -15.0, 15.0, target, 1e-7, 1e-6, 80) {
        Ok(b) if (b.value - target).abs() <= 0.005 => Ok(b.x),
        Ok(b) => Err(Error::Tuning {
            what: "baseline intercept",
            target,
            lo: b.x,
            hi: b.x,
            rate_lo: b.value,
            rate_hi: b.value,
        }),
        Err(e) => Err(Error::Tuning {
            what: "baseline intercept",
            target,
            lo: -15.0,
            hi: 15.0,
            rate_lo: e.value_lo,
            rate_hi: e.value_hi,
        }),
    }
}

/// Synthesizes a population and its baseline census. The village
/// intercepts are drawn first and the baseline intercept is tuned so the
/// expected rate given those intercepts equals the target. Returns the
/// baseline model with the tuned intercept.
pub fn build_census(
    cfg: &PopulationConfig,
    fixed_effects: &OutcomeCoefficients,
) -> Result<(Population, OutcomeCoefficients)> {
    let pop = synthesize_population(cfg)?;
    let mut coeffs = fixed_effects.clone();
    coeffs.sigma2 = icc_to_variance(cfg.icc_vaccination)?;
    coeffs.validate()?;
    let mut rng = Streams::new(cfg.rng_seed).stream(0, 0, Role::Baseline);
    let alphas = draw_intercepts(pop.n_villages(), coeffs.sigma2, &mut rng);
    coeffs.beta0 = tune_baseline_intercept(&pop, &coeffs, &alphas, cfg.baseline_target_rate)?;
    let pop = draw_baseline(&pop, &fixed_predictor(&pop, &coeffs), &alphas, &mut rng)?;
    Ok((pop, coeffs))
}
