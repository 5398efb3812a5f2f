//! Single-replicate data files: the census with one realized outcome,
//! attendance and village sample, one row per child.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dgm::Sample;
use crate::error::{Error, Result};
use crate::estimators::{estimate, AuxiliaryMatrix, EstimateResult, EstimatorOptions, Method};
use crate::harness::output::{read_csv, write_csv};
use crate::population::{Child, Population, Village};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
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
    pub y1: u8,
    pub attended: u8,
    pub sampled: u8,
}

/// A population with one realized replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub population: Population,
    pub y1: Vec<bool>,
    pub attended: Vec<bool>,
    pub sample: Sample,
}

impl DataSet {
    pub fn p_true(&self) -> f64 {
        self.y1.iter().filter(|&&y| y).count() as f64 / self.y1.len() as f64
    }

    pub fn rows(&self) -> Vec<DataRow> {
        let sampled: std::collections::HashSet<usize> =
            self.sample.sampled_villages.iter().copied().collect();
        self.population
            .dump_rows()
            .map(|r| DataRow {
                y1: u8::from(self.y1[r.child_id]),
                attended: u8::from(self.attended[r.child_id]),
                sampled: u8::from(sampled.contains(&r.village_id)),
                child_id: r.child_id,
                village_id: r.village_id,
                age_months: r.age_months,
                male: r.male,
                guardian_age_yr: r.guardian_age_yr,
                guardian_male: r.guardian_male,
                village_n_children: r.village_n_children,
                population_scaled: r.population_scaled,
                distance_km: r.distance_km,
                baseline_vaccinated: r.baseline_vaccinated,
                baseline_logodds: r.baseline_logodds,
            })
            .collect()
    }

    pub fn from_rows(rows: &[DataRow]) -> Result<DataSet> {
        let flag = |v: u8, name: &str, child: usize| match v {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::Input(format!(
                "child {child}: {name} must be 0 or 1, found {v}"
            ))),
        };
        let mut villages: Vec<Village> = Vec::new();
        let mut children = Vec::with_capacity(rows.len());
        let mut y1 = Vec::with_capacity(rows.len());
        let mut attended = Vec::with_capacity(rows.len());
        let mut sampled = Vec::new();
        for r in rows {
            let village = Village {
                id: r.village_id,
                n_children: r.village_n_children,
                population_scaled: r.population_scaled,
                distance_km: r.distance_km,
                baseline_vaccinated: r.baseline_vaccinated,
                baseline_logodds: r.baseline_logodds,
            };
            let is_sampled = flag(r.sampled, "sampled", r.child_id)?;
            match villages.last() {
                Some(v) if v.id == r.village_id => {
                    if *v != village {
                        return Err(Error::Input(format!(
                            "village {} attributes differ between rows",
                            r.village_id
                        )));
                    }
                    if sampled.contains(&r.village_id) != is_sampled {
                        return Err(Error::Input(format!(
                            "village {} has mixed sampled flags",
                            r.village_id
                        )));
                    }
                }
                _ => {
                    villages.push(village);
                    if is_sampled {
                        sampled.push(r.village_id);
                    }
                }
            }
            children.push(Child {
                id: r.child_id,
                village_id: r.village_id,
                age_months: r.age_months,
                male: flag(r.male, "male", r.child_id)?,
                guardian_age_yr: r.guardian_age_yr,
                guardian_male: flag(r.guardian_male, "guardian_male", r.child_id)?,
            });
            y1.push(flag(r.y1, "y1", r.child_id)?);
            attended.push(flag(r.attended, "attended", r.child_id)?);
        }
        let population = Population::new(villages, children)?;
        let sample = Sample::from_villages(&population, &attended, sampled);
        Ok(DataSet {
            population,
            y1,
            attended,
            sample,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows())
    }

    pub fn read(path: &Path) -> Result<DataSet> {
        let rows: Vec<DataRow> = read_csv(path)?;
        if rows.is_empty() {
            return Err(Error::Input(format!("{} has no rows", path.display())));
        }
        DataSet::from_rows(&rows)
    }

    /// Both estimators on the realized sample.
    pub fn estimate(
        &self,
        opts: &EstimatorOptions,
    ) -> Vec<(Method, Result<EstimateResult, crate::EstimationFailure>)> {
        let aux = AuxiliaryMatrix::standard(&self.population);
        Method::ALL
            .iter()
            .map(|&m| {
                (
                    m,
                    estimate(m, &self.population, &aux, &self.sample, &self.y1, opts),
                )
            })
            .collect()
    }
}
