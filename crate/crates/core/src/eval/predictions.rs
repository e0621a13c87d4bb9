use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Manifest;
use crate::error::{Error, Result};

/// One patient's aggregated score with its ground truths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub score: f64,
    pub label: Option<bool>,
    pub attribute: Option<bool>,
}

/// Image-level probabilities and their patient-level means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub images: BTreeMap<String, f64>,
    /// Sorted by patient id.
    pub patients: Vec<PatientPrediction>,
}

impl PredictionSet {
    /// Averages each patient's image probabilities; `probs` is aligned with
    /// `manifest.records`.
    pub fn aggregate(
        manifest: &Manifest,
        probs: &[f64],
        task: &str,
        attribute: Option<&str>,
    ) -> Result<Self> {
        if probs.len() != manifest.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} records",
                probs.len(),
                manifest.len()
            )));
        }
        let mut images = BTreeMap::new();
        let mut by_patient: BTreeMap<&str, (Vec<f64>, Option<bool>, Option<bool>)> =
            BTreeMap::new();
        for (r, &p) in manifest.records.iter().zip(probs) {
            images.insert(r.image_id.clone(), p);
            let entry = by_patient.entry(&r.patient_id).or_default();
            entry.0.push(p);
            entry.1 = entry.1.or(r.label(task));
            entry.2 = entry.2.or(attribute.and_then(|a| r.attribute(a)));
        }
        let patients = by_patient
            .into_iter()
            .map(|(id, (mut ps, label, attribute))| {
                // order-independent mean
                ps.sort_by(f64::total_cmp);
                PatientPrediction {
                    patient_id: id.to_string(),
                    score: ps.iter().sum::<f64>() / ps.len() as f64,
                    label,
                    attribute,
                }
            })
            .collect();
        Ok(Self { images, patients })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_util::record;

    #[test]
    fn mean_per_patient_independent_of_order() {
        let mut m = Manifest::new(vec!["y".into()], vec!["b".into()]);
        m.records.push(record(
            "a0",
            "a",
            &[("y", Some(true))],
            &[("b", Some(false))],
        ));
        m.records
            .push(record("b0", "b", &[("y", Some(false))], &[]));
        m.records.push(record(
            "a1",
            "a",
            &[("y", Some(true))],
            &[("b", Some(false))],
        ));
        m.records.push(record(
            "a2",
            "a",
            &[("y", Some(true))],
            &[("b", Some(false))],
        ));
        let probs = [0.1, 0.5, 0.37, 0.93];
        let set = PredictionSet::aggregate(&m, &probs, "y", Some("b")).unwrap();
        assert_eq!(set.patients.len(), 2);
        assert_eq!(set.patients[0].patient_id, "a");
        let mut m2 = m.clone();
        m2.records.swap(0, 3);
        let set2 = PredictionSet::aggregate(&m2, &[0.93, 0.5, 0.37, 0.1], "y", Some("b")).unwrap();
        assert_eq!(set.patients, set2.patients);
        assert_eq!(set.patients[1].attribute, None);
    }
}
