//! Auxiliary covariates shared by both estimators.

use serde::{Deserialize, Serialize};

use crate::population::Population;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Auxiliary {
    Intercept,
    Population,
    Distance,
    ChildAge,
    GuardianAge,
    ChildMale,
    GuardianMale,
    BaselineLogodds,
}

impl Auxiliary {
    pub const ALL: [Auxiliary; 8] = [
        Auxiliary::Intercept,
        Auxiliary::Population,
        Auxiliary::Distance,
        Auxiliary::ChildAge,
        Auxiliary::GuardianAge,
        Auxiliary::ChildMale,
        Auxiliary::GuardianMale,
        Auxiliary::BaselineLogodds,
    ];

    /// Order in which auxiliaries are dropped when the system is
    /// ill-conditioned. The intercept is never dropped.
    pub const DROP_ORDER: [Auxiliary; 7] = [
        Auxiliary::GuardianAge,
        Auxiliary::GuardianMale,
        Auxiliary::ChildMale,
        Auxiliary::ChildAge,
        Auxiliary::Distance,
        Auxiliary::Population,
        Auxiliary::BaselineLogodds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Auxiliary::Intercept => "intercept",
            Auxiliary::Population => "population_scaled",
            Auxiliary::Distance => "distance_km",
            Auxiliary::ChildAge => "age_months",
            Auxiliary::GuardianAge => "guardian_age_yr",
            Auxiliary::ChildMale => "child_male",
            Auxiliary::GuardianMale => "guardian_male",
            Auxiliary::BaselineLogodds => "baseline_logodds",
        }
    }

    pub fn value(self, pop: &Population, child: usize) -> f64 {
        let c = &pop.children()[child];
        let v = &pop.villages()[c.village_id];
        match self {
            Auxiliary::Intercept => 1.0,
            Auxiliary::Population => v.population_scaled,
            Auxiliary::Distance => v.distance_km,
            Auxiliary::ChildAge => f64::from(c.age_months),
            Auxiliary::GuardianAge => c.guardian_age_yr,
            Auxiliary::ChildMale => f64::from(u8::from(c.male)),
            Auxiliary::GuardianMale => f64::from(u8::from(c.guardian_male)),
            Auxiliary::BaselineLogodds => v.baseline_logodds,
        }
    }
}

/// Row-major design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    columns: Vec<Auxiliary>,
    data: Vec<f64>,
    n_rows: usize,
}

impl Design {
    pub fn from_rows(columns: Vec<Auxiliary>, rows: &[Vec<f64>]) -> Self {
        let p = columns.len();
        let mut data = Vec::with_capacity(rows.len() * p);
        for r in rows {
            assert_eq!(r.len(), p, "row width must match column count");
            data.extend_from_slice(r);
        }
        Design {
            columns,
            data,
            n_rows: rows.len(),
        }
    }

    pub fn columns(&self) -> &[Auxiliary] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.columns.len();
        &self.data[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data
            .chunks_exact(self.columns.len().max(1))
            .take(self.n_rows)
    }

    /// Rows at `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Design {
        let p = self.columns.len();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Design {
            columns: self.columns.clone(),
            data,
            n_rows: indices.len(),
        }
    }

    /// Copy restricted to `keep`, which must be a subset of the columns.
    pub fn restrict(&self, keep: &[Auxiliary]) -> Design {
        let idx: Vec<usize> = keep
            .iter()
            .map(|a| {
                self.columns
                    .iter()
                    .position(|c| c == a)
                    .expect("column present")
            })
            .collect();
        let mut data = Vec::with_capacity(self.n_rows * idx.len());
        for r in self.rows() {
            data.extend(idx.iter().map(|&k| r[k]));
        }
        Design {
            columns: keep.to_vec(),
            data,
            n_rows: self.n_rows,
        }
    }

    pub fn column_totals(&self) -> Vec<f64> {
        let mut t = vec![0.0; self.n_cols()];
        for r in self.rows() {
            for (acc, x) in t.iter_mut().zip(r) {
                *acc += x;
            }
        }
        t
    }
}

/// Census auxiliaries for all N children plus their population totals.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryMatrix {
    pub design: Design,
    pub totals: Vec<f64>,
}

impl AuxiliaryMatrix {
    pub fn from_population(pop: &Population, columns: &[Auxiliary]) -> Self {
        let n = pop.total_children();
        let mut data = Vec::with_capacity(n * columns.len());
        for i in 0..n {
            data.extend(columns.iter().map(|a| a.value(pop, i)));
        }
        let design = Design {
            columns: columns.to_vec(),
            data,
            n_rows: n,
        };
        let totals = design.column_totals();
        AuxiliaryMatrix { design, totals }
    }

    /// The full auxiliary set with intercept.
    pub fn standard(pop: &Population) -> Self {
        Self::from_population(pop, &Auxiliary::ALL)
    }

    pub fn restrict(&self, keep: &[Auxiliary]) -> AuxiliaryMatrix {
        let design = self.design.restrict(keep);
        let totals = keep
            .iter()
            .map(|a| {
                let k = self
                    .design
                    .columns()
                    .iter()
                    .position(|c| c == a)
                    .expect("column present");
                self.totals[k]
            })
            .collect();
        AuxiliaryMatrix { design, totals }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{synthesize_population, PopulationConfig};

    #[test]
    fn intercept_total_is_population_size() {
        let pop = synthesize_population(&PopulationConfig {
            n_villages: 10,
            ..PopulationConfig::default()
        })
        .unwrap();
        let aux = AuxiliaryMatrix::standard(&pop);
        assert_eq!(aux.totals[0], pop.total_children() as f64);
        assert_eq!(aux.design.n_rows(), pop.total_children());
        let r = aux.restrict(&[Auxiliary::Intercept, Auxiliary::Distance]);
        assert_eq!(r.totals.len(), 2);
        assert_eq!(r.design.row(3)[1], pop.village_of(3).distance_km);
    }
}
