use crate::dgm::Sample;
use crate::error::EstimationFailure;
use crate::population::Population;

/// Inclusion probabilities and design weights of the assumed two-stage
/// design: SRS of villages, then SRS of attendees within each village.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignWeights {
    /// First-stage inclusion probability m/M.
    pub pi_village: f64,
    /// Second-stage probability v_j/V_j per sampled village; `None` when
    /// the village has no respondents.
    pub pi_within: Vec<Option<f64>>,
    /// Design weight 1/(π_j π_i|j) per respondent.
    pub d: Vec<f64>,
}

impl DesignWeights {
    pub fn total(&self) -> f64 {
        self.d.iter().sum()
    }
}

pub fn compute_design_weights(
    sample: &Sample,
    pop: &Population,
) -> Result<DesignWeights, EstimationFailure> {
    let m = sample.m();
    if m == 0 {
        return Err(EstimationFailure::Inconsistent(
            "no sampled villages".into(),
        ));
    }
    if sample.respondent_slot.len() != sample.respondents.len() {
        return Err(EstimationFailure::Inconsistent(
            "respondent slots do not match respondents".into(),
        ));
    }
    let pi_village = m as f64 / pop.n_villages() as f64;
    let mut pi_within = Vec::with_capacity(m);
    for (&j, &v) in sample
        .sampled_villages
        .iter()
        .zip(&sample.respondents_per_village)
    {
        let big_v = pop.villages()[j].n_children as usize;
        if v > big_v {
            return Err(EstimationFailure::Inconsistent(format!(
                "village {j} has {v} respondents but only {big_v} children"
            )));
        }
        pi_within.push((v > 0).then(|| v as f64 / big_v as f64));
    }
    let mut d = Vec::with_capacity(sample.n_respondents());
    for (&child, &slot) in sample.respondents.iter().zip(&sample.respondent_slot) {
        let j = sample.sampled_villages[slot];
        if pop.children()[child].village_id != j {
            return Err(EstimationFailure::Inconsistent(format!(
                "respondent {child} is not in village {j}"
            )));
        }
        match pi_within[slot] {
            Some(p) => d.push(1.0 / (pi_village * p)),
            None => {
                return Err(EstimationFailure::Inconsistent(format!(
                    "respondent {child} in village {j} with no recorded respondents"
                )))
            }
        }
    }
    Ok(DesignWeights {
        pi_village,
        pi_within,
        d,
    })
}
