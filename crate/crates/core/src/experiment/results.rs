use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::PartRecord;
use crate::error::{Error, Result};
use crate::train::{DatasetRole, ExecutedStage, TunedScope};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_FILE: &str = "results.json";
pub const ERROR_FILE: &str = "error.json";

/// Condensed view of one executed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub role: DatasetRole,
    pub scope: TunedScope,
    pub tuned_blocks: usize,
    pub trainable_params: usize,
    pub epochs: usize,
    pub best_val_auroc: Option<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub encoder_hash_before: String,
    pub encoder_hash_after: String,
}

impl StageSummary {
    pub fn from_stage(stage: &ExecutedStage, fallback: (f64, f64)) -> Self {
        let (learning_rate, momentum) = stage
            .grid
            .as_ref()
            .map(|g| (g.configs[g.best].learning_rate, g.configs[g.best].momentum))
            .unwrap_or(fallback);
        Self {
            name: stage.outcome.name.clone(),
            role: stage.role,
            scope: stage.scope,
            tuned_blocks: stage.tuned_blocks,
            trainable_params: stage.trainable_params,
            epochs: stage.outcome.curves.len(),
            best_val_auroc: stage.outcome.best.as_ref().map(|b| b.metric),
            learning_rate,
            momentum,
            encoder_hash_before: stage.outcome.encoder_hash_before.clone(),
            encoder_hash_after: stage.outcome.encoder_hash_after.clone(),
        }
    }
}

/// One trained model scored on its condition's test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: String,
    pub seed: u64,
    pub condition: String,
    /// Numeric coordinate of the condition, if it has one.
    pub condition_value: Option<f64>,
    pub task: String,
    pub attribute: String,
    pub auroc_target: f64,
    pub auroc_target_ci: [f64; 2],
    pub auroc_attribute: Option<f64>,
    pub auroc_attribute_ci: Option<[f64; 2]>,
    pub attribute_note: Option<String>,
    pub n_test_patients: usize,
    pub test_phi: Option<f64>,
    /// Paths relative to the results directory.
    pub curves_path: String,
    pub grid_path: String,
    pub checkpoint_path: String,
    pub checkpoint_hash: String,
    pub stages: Vec<StageSummary>,
}

/// Paired bootstrap comparison of target AUROC, `a` hypothesized better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTestRecord {
    pub seed: u64,
    pub condition_a: String,
    pub scheme_a: String,
    pub condition_b: String,
    pub scheme_b: String,
    pub p_value: f64,
    /// Whether the summary table lists this test on the `b` row rather than `a`.
    pub listed_under_b: bool,
}

impl PairedTestRecord {
    /// Condition and scheme of the summary row that shows this p-value.
    pub fn row(&self) -> (&str, &str) {
        if self.listed_under_b {
            (&self.condition_b, &self.scheme_b)
        } else {
            (&self.condition_a, &self.scheme_a)
        }
    }

    pub fn label(&self) -> String {
        if self.condition_a == self.condition_b {
            format!("{} vs {}", self.scheme_a, self.scheme_b)
        } else {
            format!(
                "{}/{} vs {}/{}",
                self.condition_a, self.scheme_a, self.condition_b, self.scheme_b
            )
        }
    }
}

/// GradCAM mass inside versus outside the rendered attribute region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationRecord {
    pub seed: u64,
    pub condition: String,
    pub scheme: String,
    pub n_images: usize,
    /// Share of images whose mean map value inside the box beats the outside.
    pub fraction_inside: f64,
    pub mean_inside: f64,
    pub mean_outside: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    /// Content hash of every manifest read or built, keyed by seed/condition/part.
    pub manifests: BTreeMap<String, String>,
    /// Parameter hash of every saved checkpoint, keyed by its relative path.
    pub checkpoints: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

/// Everything an experiment run produced, as written to `results.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub resampling: Vec<PartRecord>,
    pub runs: Vec<RunRecord>,
    pub paired_tests: Vec<PairedTestRecord>,
    pub localization: Vec<LocalizationRecord>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl Results {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            schema_version: RESULTS_SCHEMA_VERSION,
            config,
            resampling: vec![],
            runs: vec![],
            paired_tests: vec![],
            localization: vec![],
            warnings: vec![],
            provenance: Provenance {
                crate_version: env!("CARGO_PKG_VERSION").into(),
                ..Provenance::default()
            },
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RESULTS_FILE);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }

    /// Reads `results.json` from a directory (or the file itself), checking
    /// the schema version before decoding the rest.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(RESULTS_FILE)
        } else {
            path.to_path_buf()
        };
        let raw: serde_json::Value = serde_json::from_slice(&std::fs::read(&file)?)?;
        let found = raw
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u32;
        if found != RESULTS_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: file,
                found,
                expected: RESULTS_SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn runs_of<'a>(
        &'a self,
        condition: &'a str,
        scheme: &'a str,
    ) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs
            .iter()
            .filter(move |r| r.condition == condition && r.scheme == scheme)
    }

    /// Distinct conditions and schemes in first-appearance order.
    pub fn conditions(&self) -> Vec<String> {
        distinct(self.runs.iter().map(|r| r.condition.clone()))
    }

    pub fn schemes(&self) -> Vec<String> {
        distinct(self.runs.iter().map(|r| r.scheme.clone()))
    }
}

pub(crate) fn distinct(items: impl Iterator<Item = String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for item in items {
        if !out.contains(&item) {
            out.push(item);
        }
    }
    out
}

/// Structured record written when a run aborts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub schema_version: u32,
    pub kind: String,
    pub message: String,
}

impl ErrorRecord {
    pub fn from_error(e: &Error) -> Self {
        let debug = format!("{e:?}");
        let kind = debug
            .split(|c: char| !c.is_alphanumeric())
            .next()
            .unwrap_or_default()
            .to_string();
        Self {
            schema_version: RESULTS_SCHEMA_VERSION,
            kind,
            message: e.to_string(),
        }
    }
}
