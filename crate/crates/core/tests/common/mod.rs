#![allow(dead_code)]

use anchorsim::population::{Child, Population, Village};

/// Population with the given village sizes. Child `i` gets age
/// `ages[i % ages.len()]` and alternating sex; village covariates are zero.
pub fn toy_population(sizes: &[u32], ages: &[u8]) -> Population {
    let villages: Vec<Village> = sizes
        .iter()
        .enumerate()
        .map(|(id, &n)| Village {
            id,
            n_children: n,
            population_scaled: 0.0,
            distance_km: 0.0,
            baseline_vaccinated: 0,
            baseline_logodds: 0.0,
        })
        .collect();
    let mut children = Vec::new();
    for (j, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            let id = children.len();
            children.push(Child {
                id,
                village_id: j,
                age_months: ages[id % ages.len()],
                male: id % 2 == 1,
                guardian_age_yr: 30.0,
                guardian_male: false,
            });
        }
    }
    Population::new(villages, children).unwrap()
}

pub fn as_f64(y: &[bool]) -> Vec<f64> {
    y.iter().map(|&b| f64::from(u8::from(b))).collect()
}
