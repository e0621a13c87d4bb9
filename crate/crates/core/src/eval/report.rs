use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{auroc_ci, MetricCi};
use super::predictions::PredictionSet;
use crate::data::{compute_phi, Manifest};
use crate::error::Result;
use crate::model::{sigmoid, stack_images, ModelState};

/// Attribute AUROC is omitted below this many attribute-positive patients.
pub const MIN_ATTRIBUTE_POSITIVES: usize = 10;
const PREDICT_CHUNK: usize = 128;

/// Target and shortcut-reliance AUROCs of one model on a test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub attribute: String,
    pub n_patients: usize,
    /// phi(task, attribute) over the test records.
    pub test_phi: Option<f64>,
    /// AUROC(ŷ, y_t).
    pub auroc_target: MetricCi,
    /// AUROC(ŷ, b), when the attribute is frequent enough.
    pub auroc_attribute: Option<MetricCi>,
    pub attribute_note: Option<String>,
    /// p-values keyed by `"A vs B"`.
    pub paired_tests: BTreeMap<String, f64>,
    pub n_bootstrap: usize,
    pub seed: u64,
}

/// Probabilities of `task` for every record, in manifest order.
pub fn predict_manifest(state: &ModelState, manifest: &Manifest, task: &str) -> Result<Vec<f64>> {
    state.head(task)?;
    let mut out = Vec::with_capacity(manifest.len());
    for chunk in manifest.records.chunks(PREDICT_CHUNK) {
        let batch = stack_images(chunk.iter().map(|r| &r.pixels));
        let features = state.features(&batch)?;
        out.extend(
            state
                .head_logits(task, &features)?
                .iter()
                .map(|&z| sigmoid(z)),
        );
    }
    Ok(out)
}

/// Scores both AUROCs with patient-level bootstrap intervals.
pub fn report_from_predictions(
    set: &PredictionSet,
    task: &str,
    attribute: &str,
    test_phi: Option<f64>,
    n_bootstrap: usize,
    seed: u64,
) -> Result<EvalReport> {
    let auroc_target = auroc_ci(&set.patients, |p| p.label, n_bootstrap, seed)?;
    let positives = set
        .patients
        .iter()
        .filter(|p| p.attribute == Some(true))
        .count();
    let negatives = set
        .patients
        .iter()
        .filter(|p| p.attribute == Some(false))
        .count();
    let (auroc_attribute, attribute_note) = if positives < MIN_ATTRIBUTE_POSITIVES || negatives == 0
    {
        (
            None,
            Some(format!(
                "attribute '{attribute}' has {positives} positive and {negatives} negative patients; AUROC omitted"
            )),
        )
    } else {
        (
            Some(auroc_ci(
                &set.patients,
                |p| p.attribute,
                n_bootstrap,
                seed.wrapping_add(1),
            )?),
            None,
        )
    };
    Ok(EvalReport {
        task: task.into(),
        attribute: attribute.into(),
        n_patients: set.patients.len(),
        test_phi,
        auroc_target,
        auroc_attribute,
        attribute_note,
        paired_tests: BTreeMap::new(),
        n_bootstrap,
        seed,
    })
}

/// Evaluates a model's reliance on the attribute shortcut on a test split
/// that should carry no label–attribute correlation.
pub fn shortcut_report(
    state: &ModelState,
    test: &Manifest,
    task: &str,
    attribute: &str,
    n_bootstrap: usize,
    seed: u64,
) -> Result<(EvalReport, PredictionSet)> {
    let probs = predict_manifest(state, test, task)?;
    let set = PredictionSet::aggregate(test, &probs, task, Some(attribute))?;
    let test_phi = compute_phi(&test.records, task, attribute).ok();
    if let Some(phi) = test_phi.filter(|p| p.abs() > 0.05) {
        log::warn!(
            "test split has phi({task}, {attribute}) = {phi:.3}; shortcut AUROCs are confounded"
        );
    }
    let report = report_from_predictions(&set, task, attribute, test_phi, n_bootstrap, seed)?;
    Ok((report, set))
}
