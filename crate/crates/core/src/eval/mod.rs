//! AUROC, patient-level aggregation, bootstrap intervals, paired tests, and
//! shortcut-reliance reports.

mod bootstrap;
mod metrics;
mod predictions;
mod report;

pub use bootstrap::{
    auroc_ci, bootstrap_ci, paired_test, paired_test_by, BootstrapInterval, MetricCi,
    DEFAULT_BOOTSTRAP,
};
pub use metrics::{auroc, auroc_opt, median, percentile};
pub use predictions::{PatientPrediction, PredictionSet};
pub use report::{
    predict_manifest, report_from_predictions, shortcut_report, EvalReport, MIN_ATTRIBUTE_POSITIVES,
};
