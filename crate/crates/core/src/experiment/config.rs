use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::synthgen::{AttributeSignal, FilterPreset};
use crate::train::{OptimizerConfig, SchemeName, SchemeRunConfig};

/// The experiment families the runner knows how to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Train a model to predict an attribute from the image.
    AttributeProbe,
    /// Train on phi = 1 and phi = 0 data and compare on an uncorrelated test set.
    SkewVsUnskew,
    /// Compare training schemes on skewed data with a rendered attribute.
    SchemeComparison,
    /// Attribute probes for each filter preset.
    FilterLearnability,
    /// Compare training schemes on data skewed through filter assignment.
    FilterSchemeComparison,
    /// Vary the source-task/filter correlation from -1 to 1.
    SourceSkewSweep,
    /// Tune 0..=B final blocks on the target after source training.
    BlockSensitivity,
    /// Two-stage transfer against joint training of both heads.
    MultitaskComparison,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::AttributeProbe,
        ExperimentKind::SkewVsUnskew,
        ExperimentKind::SchemeComparison,
        ExperimentKind::FilterLearnability,
        ExperimentKind::FilterSchemeComparison,
        ExperimentKind::SourceSkewSweep,
        ExperimentKind::BlockSensitivity,
        ExperimentKind::MultitaskComparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::AttributeProbe => "attribute_probe",
            ExperimentKind::SkewVsUnskew => "skew_vs_unskew",
            ExperimentKind::SchemeComparison => "scheme_comparison",
            ExperimentKind::FilterLearnability => "filter_learnability",
            ExperimentKind::FilterSchemeComparison => "filter_scheme_comparison",
            ExperimentKind::SourceSkewSweep => "source_skew_sweep",
            ExperimentKind::BlockSensitivity => "block_sensitivity",
            ExperimentKind::MultitaskComparison => "multitask_comparison",
        }
    }

    /// Kinds whose attribute is always the injected filter.
    pub fn requires_filter(self) -> bool {
        matches!(
            self,
            ExperimentKind::FilterLearnability
                | ExperimentKind::FilterSchemeComparison
                | ExperimentKind::SourceSkewSweep
        )
    }

    /// Schemes run when the config does not list any.
    pub fn default_schemes(self, blocks: usize) -> Vec<SchemeName> {
        match self {
            ExperimentKind::AttributeProbe
            | ExperimentKind::FilterLearnability
            | ExperimentKind::SkewVsUnskew => {
                vec![SchemeName::AllLayers]
            }
            ExperimentKind::SchemeComparison | ExperimentKind::FilterSchemeComparison => {
                SchemeName::TABLE.to_vec()
            }
            ExperimentKind::SourceSkewSweep => vec![SchemeName::LastLayerMcA],
            ExperimentKind::BlockSensitivity => (0..=blocks).map(SchemeName::Blockwise).collect(),
            ExperimentKind::MultitaskComparison => {
                vec![SchemeName::LastLayerMcA, SchemeName::Multitask]
            }
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind '{s}'")))
    }
}

/// A complete experiment description, stored as a flat `key = value` file.
///
/// Dataset keys describe either generated pools (the default) or a manifest
/// on disk used as the target pool. Training keys are shared by every
/// scheme; `learning_rates` × `momenta` is the final-stage grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Explicit scheme list; empty means the kind's default.
    pub schemes: Vec<SchemeName>,

    /// Target pool manifest CSV; generated when absent.
    pub manifest: Option<PathBuf>,
    /// Image directory for `manifest`; defaults to the manifest's directory.
    pub image_root: Option<PathBuf>,
    /// Attribute column of `manifest` used when no filter preset is set.
    pub attribute: Option<String>,
    pub target_task: String,
    pub source_task: String,

    pub image_side: usize,
    pub widths: Vec<usize>,
    pub target_patients: usize,
    pub source_patients: usize,
    pub pretrain_patients: usize,
    pub attribute_signal: AttributeSignal,
    pub noise_std: f64,
    pub coupling: f64,
    pub target_prevalence: f64,
    pub source_prevalence: f64,

    /// Filter preset; setting it makes the injected filter the attribute.
    pub preset: Option<FilterPreset>,
    /// Presets probed by `filter_learnability`.
    pub presets: Vec<FilterPreset>,
    /// Multiplier applied to both preset sigmas.
    pub sigma_scale: f64,
    /// Share of filtered images when the filter is uncorrelated (probes).
    pub filter_rate: f64,
    /// Share of filtered source images; must allow the sweep's phi = ±1.
    pub source_filter_rate: f64,

    pub test_fraction: f64,
    pub validation_fraction: f64,
    /// phi(target, attribute) of skewed training and validation data.
    pub target_phi: f64,
    /// phi(source, filter) outside the sweep.
    pub source_phi: f64,
    pub sweep_step: f64,
    pub prevalence_window: f64,
    pub tolerance: f64,
    /// Also train every scheme on unskewed data in the comparison kinds.
    pub include_unskewed: bool,

    pub learning_rates: Vec<f64>,
    pub momenta: Vec<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub checkpoint_interval: usize,
    pub source_learning_rate: f64,
    pub source_momentum: f64,
    pub pretrain_learning_rate: f64,
    pub pretrain_batch_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_restarts: usize,
    pub pretrain_checkpoint_interval: usize,

    pub n_bootstrap: usize,
    /// Write GradCAM overlays and localization statistics (attribute probes).
    pub gradcam: bool,
    pub gradcam_images: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelSpec::default();
        Self {
            kind: ExperimentKind::FilterSchemeComparison,
            seeds: vec![0, 1, 2],
            schemes: vec![],
            manifest: None,
            image_root: None,
            attribute: None,
            target_task: crate::synthgen::TARGET_TASK.into(),
            source_task: crate::synthgen::SOURCE_TASK.into(),
            image_side: model.input_side,
            widths: model.widths,
            target_patients: 1200,
            source_patients: 1000,
            pretrain_patients: 2000,
            attribute_signal: AttributeSignal::Marker,
            noise_std: 0.04,
            coupling: 0.35,
            target_prevalence: 0.3,
            source_prevalence: 0.5,
            preset: None,
            presets: FilterPreset::ALL.to_vec(),
            sigma_scale: 1.0,
            filter_rate: 0.25,
            source_filter_rate: 0.5,
            test_fraction: 0.3,
            validation_fraction: 0.2,
            target_phi: 1.0,
            source_phi: 0.0,
            sweep_step: 0.2,
            prevalence_window: crate::skew::DEFAULT_PREVALENCE_WINDOW,
            tolerance: 0.05,
            include_unskewed: false,
            learning_rates: vec![1e-3, 1e-2, 1e-1],
            momenta: vec![0.8, 0.9],
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            checkpoint_interval: 200,
            source_learning_rate: 1e-2,
            source_momentum: 0.9,
            pretrain_learning_rate: 1e-4,
            pretrain_batch_size: 16,
            pretrain_epochs: 3,
            pretrain_restarts: 3,
            pretrain_checkpoint_interval: 200,
            n_bootstrap: crate::eval::DEFAULT_BOOTSTRAP,
            gradcam: false,
            gradcam_images: 16,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for `kind`; filter kinds start from the easy preset.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        Self {
            kind,
            preset: kind.requires_filter().then_some(FilterPreset::Easy),
            ..Self::default()
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec::new(self.image_side, self.widths.clone())
    }

    pub fn schemes(&self) -> Vec<SchemeName> {
        if self.schemes.is_empty() {
            self.kind.default_schemes(self.widths.len())
        } else {
            self.schemes.clone()
        }
    }

    /// The filter preset in effect, if the attribute is the filter.
    pub fn filter_preset(&self) -> Option<FilterPreset> {
        match (self.preset, self.kind.requires_filter()) {
            (Some(p), _) => Some(p),
            (None, true) => Some(FilterPreset::Easy),
            (None, false) => None,
        }
    }

    /// Source-task phi values of the sweep, from -1 to 1.
    pub fn sweep_points(&self) -> Vec<f64> {
        let steps = (2.0 / self.sweep_step).round() as i64;
        (0..=steps)
            .map(|i| {
                let v = -1.0 + i as f64 * 2.0 / steps as f64;
                // snap to one decimal-ish grid so labels read cleanly
                (v * 1e9).round() / 1e9
            })
            .collect()
    }

    /// Final-stage grid in learning-rate-major order.
    pub fn final_grid(&self) -> Vec<OptimizerConfig> {
        self.learning_rates
            .iter()
            .flat_map(|&lr| self.momenta.iter().map(move |&m| (lr, m)))
            .map(|(lr, m)| self.sgd(lr, m))
            .collect()
    }

    fn sgd(&self, lr: f64, momentum: f64) -> OptimizerConfig {
        let mut o = OptimizerConfig::sgd(lr, momentum);
        o.batch_size = self.batch_size;
        o.max_epochs = self.max_epochs;
        o.patience = self.patience;
        o.checkpoint_interval_batches = self.checkpoint_interval;
        o
    }

    pub fn scheme_run_config(&self, seed: u64) -> SchemeRunConfig {
        let mut pretrain = OptimizerConfig::adam();
        pretrain.learning_rate = self.pretrain_learning_rate;
        pretrain.batch_size = self.pretrain_batch_size;
        pretrain.max_epochs = self.pretrain_epochs;
        pretrain.patience = self.pretrain_epochs.max(1);
        pretrain.checkpoint_interval_batches = self.pretrain_checkpoint_interval;
        SchemeRunConfig {
            model: self.model_spec(),
            source_task: self.source_task.clone(),
            target_task: self.target_task.clone(),
            pretrain_optimizer: pretrain,
            pretrain_restarts: self.pretrain_restarts,
            source_optimizer: self.sgd(self.source_learning_rate, self.source_momentum),
            final_grid: self.final_grid(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model_spec().validate()?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.learning_rates.is_empty() || self.momenta.is_empty() {
            return bad("learning_rates and momenta must be non-empty".into());
        }
        if self.learning_rates.iter().any(|&lr| !(lr > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        for (name, v) in [
            ("test_fraction", self.test_fraction),
            ("validation_fraction", self.validation_fraction),
            ("filter_rate", self.filter_rate),
            ("source_filter_rate", self.source_filter_rate),
            ("target_prevalence", self.target_prevalence),
            ("source_prevalence", self.source_prevalence),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1)"));
            }
        }
        for (name, v) in [
            ("target_phi", self.target_phi),
            ("source_phi", self.source_phi),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [-1, 1]"));
            }
        }
        if !(self.sweep_step > 0.0 && self.sweep_step <= 2.0) {
            return bad("sweep_step must lie in (0, 2]".into());
        }
        if !(self.sigma_scale >= 0.0) {
            return bad("sigma_scale must be non-negative".into());
        }
        if self.batch_size == 0 || self.pretrain_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.kind == ExperimentKind::FilterLearnability && self.presets.is_empty() {
            return bad("filter_learnability needs at least one preset".into());
        }
        if self.manifest.is_some() && self.filter_preset().is_none() && self.attribute.is_none() {
            return bad("a manifest-based experiment needs `attribute` or a filter preset".into());
        }
        let probe = matches!(
            self.kind,
            ExperimentKind::AttributeProbe | ExperimentKind::FilterLearnability
        );
        if self.filter_preset().is_none() && !probe && self.target_phi != 1.0 {
            return bad("rendered attributes support only target_phi = 1".into());
        }
        for scheme in self.schemes() {
            if let SchemeName::Blockwise(k) = scheme {
                if k > self.widths.len() {
                    return bad(format!(
                        "blockwise({k}) exceeds {} blocks",
                        self.widths.len()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_lossless() {
        for kind in ExperimentKind::ALL {
            let mut config = ExperimentConfig::for_kind(kind);
            config.seeds = vec![4, 9];
            config.manifest = Some("data/m.csv".into());
            config.attribute = Some("pacemaker".into());
            let text = config.to_text();
            assert!(text.contains(&format!("kind = \"{kind}\"")));
            assert_eq!(ExperimentConfig::from_text(&text).unwrap(), config);
        }
    }

    #[test]
    fn partial_config_uses_defaults() {
        let c = ExperimentConfig::from_text(
            "kind = \"block_sensitivity\"\nseeds = [5]\npreset = \"difficult\"\n",
        )
        .unwrap();
        assert_eq!(c.seeds, vec![5]);
        assert_eq!(c.schemes().len(), c.widths.len() + 1);
        assert_eq!(c.filter_preset(), Some(FilterPreset::Difficult));
        assert_eq!(c.final_grid().len(), 6);
    }

    #[test]
    fn sweep_has_eleven_points() {
        let c = ExperimentConfig::for_kind(ExperimentKind::SourceSkewSweep);
        let points = c.sweep_points();
        assert_eq!(points.len(), 11);
        assert_eq!(points[0], -1.0);
        assert_eq!(points[5], 0.0);
        assert_eq!(points[10], 1.0);
        assert!((points[3] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig::from_text("kind = \"nope\"").is_err());
        assert!(ExperimentConfig::from_text("seeds = []").is_err());
        assert!(ExperimentConfig::from_text("target_phi = 1.5").is_err());
        assert!(ExperimentConfig::from_text("mystery = 1").is_err());
        assert!(ExperimentConfig::from_text("image_side = 30").is_err());
        assert!(ExperimentConfig::from_text("schemes = [\"blockwise(9)\"]").is_err());
    }
}
