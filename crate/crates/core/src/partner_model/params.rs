use serde::{Deserialize, Serialize};

use super::{Feature, PartnerModelError};

const TOLERANCE: f64 = 1e-9;

/// One value per latent feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerFeature<T> {
    pub expertise: T,
    pub load: T,
    pub attentiveness: T,
    pub cooperativeness: T,
}

impl<T: Clone> PerFeature<T> {
    pub fn splat(value: T) -> Self {
        Self {
            expertise: value.clone(),
            load: value.clone(),
            attentiveness: value.clone(),
            cooperativeness: value,
        }
    }
}

impl<T> PerFeature<T> {
    pub fn get(&self, feature: Feature) -> &T {
        match feature {
            Feature::Expertise => &self.expertise,
            Feature::Load => &self.load,
            Feature::Attentiveness => &self.attentiveness,
            Feature::Cooperativeness => &self.cooperativeness,
        }
    }
}

/// Observation CPTs. Binary observables store P(yes); `tae` rows are
/// distributions over [lower, none, higher].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationTables {
    /// `[E][A]`
    pub pos_given_expertise_attentiveness: [[f64; 3]; 3],
    /// `[A]`
    pub neg_given_attentiveness: [f64; 3],
    /// `[C][A]`
    pub sub_given_cooperativeness_attentiveness: [[f64; 3]; 3],
    /// `[L][E]`
    pub tae_given_load_expertise: [[[f64; 3]; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbnParameters {
    pub initial: PerFeature<[f64; 3]>,
    /// Row = previous level, column = next level.
    pub transition: PerFeature<[[f64; 3]; 3]>,
    pub observation: ObservationTables,
    /// Numeric value of low / medium / high.
    pub value_map: [f64; 3],
}

fn sticky(stay: f64) -> [[f64; 3]; 3] {
    let move_out = 1.0 - stay;
    [
        [stay, move_out, 0.0],
        [move_out / 2.0, stay, move_out / 2.0],
        [0.0, move_out, stay],
    ]
}

fn outer(rows: [f64; 3], cols: [f64; 3]) -> [[f64; 3]; 3] {
    rows.map(|r| cols.map(|c| r * c))
}

impl Default for DbnParameters {
    fn default() -> Self {
        let attention = [0.5, 0.75, 1.0];
        let tae_rows: [[f64; 3]; 3] = [[0.5, 0.4, 0.1], [0.25, 0.5, 0.25], [0.1, 0.4, 0.5]];
        let tae = tae_rows.map(|row| {
            let mut by_e = [row; 3];
            // experts shift mass from higher towards lower typing effort
            let shift = row[2].min(0.1);
            by_e[2] = [row[0] + shift, row[1], row[2] - shift];
            by_e
        });
        Self {
            initial: PerFeature::splat([1.0 / 3.0; 3]),
            transition: PerFeature {
                expertise: sticky(0.95),
                load: sticky(0.8),
                attentiveness: sticky(0.8),
                cooperativeness: sticky(0.8),
            },
            observation: ObservationTables {
                pos_given_expertise_attentiveness: outer([0.2, 0.45, 0.7], attention),
                neg_given_attentiveness: [0.05, 0.15, 0.25],
                sub_given_cooperativeness_attentiveness: outer([0.1, 0.3, 0.5], attention),
                tae_given_load_expertise: tae,
            },
            value_map: [0.0, 0.5, 1.0],
        }
    }
}

fn check_distribution(table: &str, row: String, values: &[f64]) -> Result<(), PartnerModelError> {
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(PartnerModelError::ProbabilityOutOfRange {
                table: table.to_string(),
                value: v,
            });
        }
    }
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > TOLERANCE {
        return Err(PartnerModelError::MalformedDistribution {
            table: table.to_string(),
            row,
            sum,
        });
    }
    Ok(())
}

fn check_probability(table: &str, value: f64) -> Result<(), PartnerModelError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(PartnerModelError::ProbabilityOutOfRange {
            table: table.to_string(),
            value,
        })
    }
}

impl DbnParameters {
    pub fn validate(&self) -> Result<(), PartnerModelError> {
        for feature in Feature::ALL {
            let name = format!("{feature:?}").to_lowercase();
            check_distribution(
                &format!("initial.{name}"),
                "marginal".into(),
                self.initial.get(feature),
            )?;
            for (i, row) in self.transition.get(feature).iter().enumerate() {
                check_distribution(&format!("transition.{name}"), format!("{i}"), row)?;
            }
        }
        let o = &self.observation;
        for row in &o.pos_given_expertise_attentiveness {
            for &p in row {
                check_probability("observation.pos_given_expertise_attentiveness", p)?;
            }
        }
        for &p in &o.neg_given_attentiveness {
            check_probability("observation.neg_given_attentiveness", p)?;
        }
        for row in &o.sub_given_cooperativeness_attentiveness {
            for &p in row {
                check_probability("observation.sub_given_cooperativeness_attentiveness", p)?;
            }
        }
        for (l, by_e) in o.tae_given_load_expertise.iter().enumerate() {
            for (e, row) in by_e.iter().enumerate() {
                check_distribution(
                    "observation.tae_given_load_expertise",
                    format!("[{l}][{e}]"),
                    row,
                )?;
            }
        }
        let v = self.value_map;
        if !(0.0 <= v[0] && v[0] <= v[1] && v[1] <= v[2] && v[2] <= 1.0) {
            return Err(PartnerModelError::InvalidValueMap);
        }
        Ok(())
    }
}
