//! Radiograph-like synthetic images with controllable label and attribute
//! signals.
//!
//! Every patient draws two latents: `heart` (ellipse size) and `fluid`
//! (density of opacity blobs in the lung fields). The target and source
//! labels are thresholded mixtures of the two, so features learned for one
//! task partially transfer to the other. The attribute is an independent coin
//! that is rendered according to [`AttributeSignal`].

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::config::{AttributeSignal, GeneratorConfig, TargetSignal};
use super::preprocess::{preprocess, Mode, PreprocessParams};
use crate::data::{ImageRecord, Manifest};
use crate::error::Result;
use crate::rng::rng_for;

pub const TARGET_TASK: &str = "chf";
pub const SOURCE_TASK: &str = "pneumonia";
pub const AUX_TASKS: [&str; 3] = ["cardiomegaly", "opacity", "effusion"];

/// Pixel box `[top, left, bottom, right)` in final image coordinates.
pub type PixelBox = [usize; 4];

/// Latent parameters behind one generated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub image_id: String,
    pub patient_id: String,
    pub heart: f64,
    pub fluid: f64,
    pub attribute: bool,
    pub noise_level: f64,
    pub blob_count: usize,
    pub marker_box: Option<PixelBox>,
}

/// Ground-truth sidecar for a generated manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: GeneratorConfig,
    pub images: Vec<ImageTruth>,
}

impl GroundTruth {
    pub fn marker_box(&self, image_id: &str) -> Option<PixelBox> {
        self.images
            .iter()
            .find(|t| t.image_id == image_id)
            .and_then(|t| t.marker_box)
    }
}

struct PatientLatent {
    heart: f64,
    fluid: f64,
    attribute: bool,
    images: usize,
}

/// Marks the top `round(p n)` scores as positive.
fn top_fraction(scores: &[f64], p: f64) -> Vec<bool> {
    let n = scores.len();
    let k = (p * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut out = vec![false; n];
    for &i in order.iter().take(k) {
        out[i] = true;
    }
    out
}

/// Soft inside-ness of an ellipse with a ~1.5 pixel edge ramp.
fn ellipse_weight(y: f64, x: f64, cy: f64, cx: f64, ry: f64, rx: f64) -> f64 {
    let e = (((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2)).sqrt();
    let scale = rx.min(ry) / 1.5;
    ((1.0 - e) * scale + 0.5).clamp(0.0, 1.0)
}

struct Rendered {
    pixels: Array2<f64>,
    noise_level: f64,
    blob_count: usize,
    marker_box: Option<PixelBox>,
}

fn render(
    config: &GeneratorConfig,
    latent: &PatientLatent,
    anatomy: &mut ChaCha8Rng,
    nuisance: &mut ChaCha8Rng,
) -> Rendered {
    let w = config.image_side;
    let h = (w as f64 * config.aspect).round() as usize;
    let (wf, hf) = (w as f64, h as f64);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    // anatomy shared by a patient's images
    let shift_x = 0.02 * std_normal.sample(anatomy);
    let shift_y = 0.02 * std_normal.sample(anatomy);
    let base_level = 0.40 + 0.03 * std_normal.sample(anatomy);
    let lungs = [
        (0.45 + shift_y, 0.30 + shift_x),
        (0.45 + shift_y, 0.70 + shift_x),
    ];
    let (lung_ry, lung_rx) = (0.30 * hf, 0.17 * wf);
    let heart_scale = (1.0 + config.heart_gain * latent.heart).max(0.3);
    let (heart_ry, heart_rx) = (0.11 * hf * heart_scale, 0.14 * wf * heart_scale);
    let (heart_cy, heart_cx) = ((0.66 + shift_y) * hf, (0.54 + shift_x) * wf);

    let rate = config.blob_rate * (config.blob_gain * latent.fluid).exp();
    let blob_count = if rate > 0.0 {
        Poisson::new(rate).unwrap().sample(anatomy) as usize
    } else {
        0
    };
    let blob_radius = 0.035 * wf;
    let blobs: Vec<(f64, f64)> = (0..blob_count)
        .map(|_| {
            let (cy, cx) = lungs[anatomy.random_range(0..2)];
            // uniform point in the unit disk, scaled into the lung ellipse
            let r = anatomy.random::<f64>().sqrt() * 0.85;
            let t = anatomy.random::<f64>() * std::f64::consts::TAU;
            (
                cy * hf + r * t.sin() * lung_ry,
                cx * wf + r * t.cos() * lung_rx,
            )
        })
        .collect();

    let marker =
        (config.attribute_signal == AttributeSignal::Marker && latent.attribute).then(|| {
            let left_side = anatomy.random::<bool>();
            let bw = (0.16 * wf).round() as usize;
            let bh = (0.10 * hf).round() as usize;
            let top = ((0.14 + 0.06 * anatomy.random::<f64>()) * hf) as usize;
            let left = if left_side {
                ((0.10 + 0.06 * anatomy.random::<f64>()) * wf) as usize
            } else {
                ((0.74 + 0.06 * anatomy.random::<f64>()) * wf) as usize - bw / 2
            };
            [top, left, (top + bh).min(h), (left + bw).min(w)]
        });
    let fat = match config.attribute_signal {
        AttributeSignal::IntensityProfile => Some(if latent.attribute { 0.16 } else { 0.07 }),
        _ => None,
    };

    let noise_level = config.noise_std * (config.noise_spread * std_normal.sample(nuisance)).exp();
    let noise = Normal::new(0.0, noise_level).unwrap();

    let mut content = Array2::zeros((h, w));
    for ((y, x), v) in content.indexed_iter_mut() {
        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
        let mut value = base_level + 0.1 * (yf / hf - 0.5);
        for &(cy, cx) in &lungs {
            value -= 0.22 * ellipse_weight(yf, xf, cy * hf, cx * wf, lung_ry, lung_rx);
        }
        let heart = ellipse_weight(yf, xf, heart_cy, heart_cx, heart_ry, heart_rx);
        value += heart * (0.78 - value);
        for &(by, bx) in &blobs {
            let d2 = (yf - by).powi(2) + (xf - bx).powi(2);
            value += 0.12 * (-d2 / (2.0 * blob_radius * blob_radius)).exp();
        }
        if let Some(amp) = fat {
            let edge = (xf / wf).min(1.0 - xf / wf);
            value += amp * (-edge / 0.07).exp();
        }
        if let Some([t, l, b, r]) = marker {
            if (t..b).contains(&y) && (l..r).contains(&x) {
                value = 0.97;
            }
        }
        value += noise.sample(nuisance);
        *v = value.clamp(0.02, 1.0);
    }

    let b = config.border;
    let mut raw = Array2::zeros((h + 2 * b, w + 2 * b));
    raw.slice_mut(ndarray::s![b..b + h, b..b + w])
        .assign(&content);
    Rendered {
        pixels: raw,
        noise_level,
        blob_count,
        marker_box: marker,
    }
}

/// Generates a manifest and its ground-truth latents; deterministic in `config.seed`.
pub fn generate(config: &GeneratorConfig) -> Result<(Manifest, GroundTruth)> {
    config.validate()?;
    let attribute_name = config.attribute_signal.attribute_name();
    let mut tasks = vec![TARGET_TASK.to_string(), SOURCE_TASK.to_string()];
    tasks.extend(AUX_TASKS.iter().map(|t| t.to_string()));
    let mut manifest = Manifest::new(tasks, vec![attribute_name.to_string()]);
    let mut truth = GroundTruth {
        config: config.clone(),
        images: Vec::new(),
    };
    if config.n_patients == 0 {
        return Ok((manifest, truth));
    }

    let n = config.n_patients;
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut latent_rng = rng_for(config.seed, u64::MAX);
    let latents: Vec<PatientLatent> = (0..n)
        .map(|_| PatientLatent {
            heart: std_normal.sample(&mut latent_rng),
            fluid: std_normal.sample(&mut latent_rng),
            attribute: latent_rng.random::<f64>() < config.attribute_rate,
            images: 1 + (latent_rng.random::<f64>() < config.second_image_probability) as usize,
        })
        .collect();
    let mut noisy = |f: &dyn Fn(&PatientLatent) -> f64, noise_sd: f64| -> Vec<f64> {
        latents
            .iter()
            .map(|l| f(l) + noise_sd * std_normal.sample(&mut latent_rng))
            .collect::<Vec<_>>()
    };
    let c = config.coupling;
    let (target_score, source_score): (
        Box<dyn Fn(&PatientLatent) -> f64>,
        Box<dyn Fn(&PatientLatent) -> f64>,
    ) = match config.target_signal {
        TargetSignal::EllipseSize => (
            Box::new(move |l| (1.0 - c) * l.heart + c * l.fluid),
            Box::new(move |l| (1.0 - c) * l.fluid + c * l.heart),
        ),
        TargetSignal::TextureDensity => (
            Box::new(move |l| (1.0 - c) * l.fluid + c * l.heart),
            Box::new(move |l| (1.0 - c) * l.heart + c * l.fluid),
        ),
    };
    let target = top_fraction(
        &noisy(&*target_score, config.label_noise),
        config.target_prevalence,
    );
    let source = top_fraction(
        &noisy(&*source_score, config.label_noise),
        config.source_prevalence,
    );
    let aux: Vec<Vec<bool>> = vec![
        top_fraction(&noisy(&|l| l.heart, 0.3), 0.3),
        top_fraction(&noisy(&|l| l.fluid, 0.3), 0.4),
        top_fraction(&noisy(&|l| (l.heart + l.fluid) / 2f64.sqrt(), 0.5), 0.25),
    ];

    let params = PreprocessParams {
        resize: config.image_side,
        crop: config.image_side,
        max_rotation_deg: 0.0,
    };
    let raw_h = (config.image_side as f64 * config.aspect).round() as usize;
    let crop_top = (raw_h - config.image_side) / 2;

    for (p, latent) in latents.iter().enumerate() {
        let patient_id = format!("{}{p:05}", config.id_prefix);
        let mut anatomy = rng_for(config.seed, 2 * p as u64);
        let mut labels = BTreeMap::new();
        labels.insert(TARGET_TASK.to_string(), Some(target[p]));
        labels.insert(SOURCE_TASK.to_string(), Some(source[p]));
        for (name, values) in AUX_TASKS.iter().zip(&aux) {
            let missing = anatomy.random::<f64>() < config.aux_missing_rate;
            labels.insert(name.to_string(), (!missing).then_some(values[p]));
        }
        let mut nuisance = rng_for(config.seed, 2 * p as u64 + 1);
        for k in 0..latent.images {
            // anatomy stream is replayed per image so a study shares its layout
            let mut layout = anatomy.clone();
            let rendered = render(config, latent, &mut layout, &mut nuisance);
            let pixels = if config.apply_preprocessing {
                preprocess(&rendered.pixels, Mode::Eval, &params, 0)?
            } else {
                rendered.pixels
            };
            let marker_box = rendered.marker_box.map(|[t, l, b, r]| {
                if config.apply_preprocessing {
                    let shift = |v: usize| v.saturating_sub(crop_top).min(config.image_side);
                    [shift(t), l, shift(b), r]
                } else {
                    [
                        t + config.border,
                        l + config.border,
                        b + config.border,
                        r + config.border,
                    ]
                }
            });
            let image_id = format!("{patient_id}-{k}");
            truth.images.push(ImageTruth {
                image_id: image_id.clone(),
                patient_id: patient_id.clone(),
                heart: latent.heart,
                fluid: latent.fluid,
                attribute: latent.attribute,
                noise_level: rendered.noise_level,
                blob_count: rendered.blob_count,
                marker_box,
            });
            manifest.records.push(ImageRecord {
                image_id,
                patient_id: patient_id.clone(),
                study_id: format!("{patient_id}-s"),
                pixels,
                labels: labels.clone(),
                attributes: [(attribute_name.to_string(), Some(latent.attribute))].into(),
            });
        }
    }
    Ok((manifest, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_phi, Field};

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            image_side: 32,
            n_patients: 60,
            seed,
            attribute_signal: AttributeSignal::Marker,
            ..Default::default()
        }
    }

    #[test]
    fn zero_patients_gives_empty_manifest() {
        let (m, t) = generate(&GeneratorConfig {
            n_patients: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(m.is_empty());
        assert!(t.images.is_empty());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let (a, ta) = generate(&small(5)).unwrap();
        let (b, tb) = generate(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate(&small(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn images_are_square_in_unit_range() {
        let (m, _) = generate(&small(1)).unwrap();
        m.validate().unwrap();
        assert!(m.len() >= 60);
        for r in &m.records {
            assert_eq!(r.pixels.dim(), (32, 32));
            assert!(r.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn prevalences_match_config() {
        let config = GeneratorConfig {
            n_patients: 400,
            image_side: 16,
            second_image_probability: 0.0,
            ..Default::default()
        };
        let (m, _) = generate(&config).unwrap();
        let prev = m.positive_rate(&Field::label(TARGET_TASK)).unwrap();
        assert!((prev - config.target_prevalence).abs() < 1e-9);
        let prev = m.positive_rate(&Field::label(SOURCE_TASK)).unwrap();
        assert!((prev - config.source_prevalence).abs() < 1e-9);
        // the attribute coin is independent of the labels
        assert!(
            compute_phi(&m.records, TARGET_TASK, "latent")
                .unwrap()
                .abs()
                < 0.15
        );
    }

    #[test]
    fn marker_boxes_are_bright() {
        let (m, truth) = generate(&small(2)).unwrap();
        let mut boxed = 0;
        for (r, t) in m.records.iter().zip(&truth.images) {
            assert_eq!(t.attribute, r.attribute("pacemaker").unwrap());
            if let Some([top, left, bottom, right]) = t.marker_box {
                boxed += 1;
                let inside = r.pixels.slice(ndarray::s![top..bottom, left..right]);
                assert!(
                    inside.mean().unwrap() > 0.9,
                    "marker mean {}",
                    inside.mean().unwrap()
                );
            }
        }
        assert!(boxed > 0);
    }
}
