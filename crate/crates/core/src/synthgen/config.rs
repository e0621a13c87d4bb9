use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Visual signal that carries the target label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSignal {
    /// Heart-like ellipse whose size drives the target (structural).
    EllipseSize,
    /// Density of opacity blobs in the lung fields drives the target (textural).
    TextureDensity,
}

/// Visual signal that carries the demographic-proxy attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeSignal {
    /// Bright rectangle in the upper chest (pacemaker proxy).
    Marker,
    /// Thicker bright soft-tissue bands at the lateral edges (body-fat proxy).
    IntensityProfile,
    /// The attribute is drawn but never rendered.
    None,
}

impl AttributeSignal {
    /// Attribute column name written to the manifest.
    pub fn attribute_name(self) -> &'static str {
        match self {
            AttributeSignal::Marker => "pacemaker",
            AttributeSignal::IntensityProfile => "bmi",
            AttributeSignal::None => "latent",
        }
    }
}

/// Parameters of the synthetic radiograph generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_side: usize,
    pub n_patients: usize,
    /// Probability that a patient's study holds a second image.
    pub second_image_probability: f64,
    pub target_signal: TargetSignal,
    pub attribute_signal: AttributeSignal,
    /// Median per-image pixel noise standard deviation.
    pub noise_std: f64,
    /// Log-scale spread of the per-image noise level.
    pub noise_spread: f64,
    pub seed: u64,
    pub target_prevalence: f64,
    pub source_prevalence: f64,
    /// Standard deviation of label noise added to the latent scores.
    pub label_noise: f64,
    /// Weight of the shared latent in both the target and source scores.
    pub coupling: f64,
    /// Relative size change of the heart ellipse per unit latent.
    pub heart_gain: f64,
    /// Expected opacity blob count at zero latent.
    pub blob_rate: f64,
    /// Log-rate change of the blob count per unit latent.
    pub blob_gain: f64,
    pub attribute_rate: f64,
    /// Missingness of auxiliary pretraining labels.
    pub aux_missing_rate: f64,
    /// Width of the zero border around raw images.
    pub border: usize,
    /// Raw height / width before cropping.
    pub aspect: f64,
    pub id_prefix: String,
    pub apply_preprocessing: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_side: 64,
            n_patients: 500,
            second_image_probability: 0.07,
            target_signal: TargetSignal::EllipseSize,
            attribute_signal: AttributeSignal::None,
            noise_std: 0.04,
            noise_spread: 0.3,
            seed: 0,
            target_prevalence: 0.3,
            source_prevalence: 0.5,
            label_noise: 0.4,
            coupling: 0.35,
            heart_gain: 0.18,
            blob_rate: 6.0,
            blob_gain: 0.6,
            attribute_rate: 0.3,
            aux_missing_rate: 0.1,
            border: 3,
            aspect: 1.1,
            id_prefix: "p".into(),
            apply_preprocessing: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.image_side < 16 {
            return bad("image_side must be at least 16");
        }
        if !(self.noise_std > 0.0) {
            return bad("noise_std must be positive");
        }
        for (name, p) in [
            ("second_image_probability", self.second_image_probability),
            ("aux_missing_rate", self.aux_missing_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, p) in [
            ("target_prevalence", self.target_prevalence),
            ("source_prevalence", self.source_prevalence),
            ("attribute_rate", self.attribute_rate),
        ] {
            if !(p > 0.0 && p < 1.0) {
                return bad(&format!("{name} must lie in (0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.coupling) {
            return bad("coupling must lie in [0, 1]");
        }
        if !(self.aspect >= 1.0) {
            return bad("aspect must be >= 1");
        }
        if self.noise_spread < 0.0 || self.label_noise < 0.0 || self.blob_rate < 0.0 {
            return bad("spreads and rates must be non-negative");
        }
        Ok(())
    }

    /// Parses the `key = value` text form.
    pub fn from_text(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("generator config serializes")
    }
}
