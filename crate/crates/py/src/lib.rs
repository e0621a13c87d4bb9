//! Python bindings: manifests, the generator, resampling, metrics, models
//! and the experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use shortcut_lab::data::{self, BitDepth, Contingency, CorrelationSpec, Manifest, SplitFractions};
use shortcut_lab::eval::{self, PatientPrediction};
use shortcut_lab::experiment::{self, ExperimentConfig, ExperimentKind};
use shortcut_lab::model::{self, ModelState};
use shortcut_lab::synthgen::{self, FilterBiasSpec, FilterPreset, GeneratorConfig};
use shortcut_lab::{skew, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Image records with labels and attributes.
#[pyclass(name = "Manifest", module = "shortcut_lab")]
#[derive(Clone)]
pub struct PyManifest {
    pub inner: Manifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    #[pyo3(signature = (path, image_root = None))]
    fn load(path: PathBuf, image_root: Option<PathBuf>) -> PyResult<Self> {
        let root = image_root
            .unwrap_or_else(|| path.parent().map(|p| p.to_path_buf()).unwrap_or_default());
        Ok(Self {
            inner: data::load_manifest(&path, &root).map_err(to_py)?,
        })
    }

    #[pyo3(signature = (csv_path, image_dir, sixteen_bit = false))]
    fn write(&self, csv_path: PathBuf, image_dir: PathBuf, sixteen_bit: bool) -> PyResult<()> {
        let depth = if sixteen_bit {
            BitDepth::Sixteen
        } else {
            BitDepth::Eight
        };
        data::write_manifest(&self.inner, &csv_path, &image_dir, depth).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Manifest({} images, {} patients, tasks={:?}, attributes={:?})",
            self.inner.len(),
            self.inner.patient_ids().len(),
            self.inner.declared_tasks,
            self.inner.declared_attributes
        )
    }

    #[getter]
    fn tasks(&self) -> Vec<String> {
        self.inner.declared_tasks.clone()
    }

    #[getter]
    fn attributes(&self) -> Vec<String> {
        self.inner.declared_attributes.clone()
    }

    #[getter]
    fn image_ids(&self) -> Vec<String> {
        self.inner
            .records
            .iter()
            .map(|r| r.image_id.clone())
            .collect()
    }

    #[getter]
    fn patient_ids(&self) -> Vec<String> {
        self.inner
            .records
            .iter()
            .map(|r| r.patient_id.clone())
            .collect()
    }

    fn labels(&self, task: &str) -> Vec<Option<bool>> {
        self.inner.records.iter().map(|r| r.label(task)).collect()
    }

    fn attribute(&self, name: &str) -> Vec<Option<bool>> {
        self.inner
            .records
            .iter()
            .map(|r| r.attribute(name))
            .collect()
    }

    /// Pixel rows of one image.
    fn pixels(&self, index: usize) -> PyResult<Vec<Vec<f64>>> {
        let r = self
            .inner
            .records
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        Ok(r.pixels
            .rows()
            .into_iter()
            .map(|row| row.to_vec())
            .collect())
    }

    fn phi(&self, task: &str, attribute: &str) -> PyResult<f64> {
        data::compute_phi(&self.inner.records, task, attribute).map_err(to_py)
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    fn promote_attribute(&self, name: &str) -> Self {
        Self {
            inner: self.inner.promote_attribute(name),
        }
    }

    /// Patient-level train/validation/test split.
    #[pyo3(signature = (train, validation, test, seed = 0))]
    fn split(
        &self,
        train: f64,
        validation: f64,
        test: f64,
        seed: u64,
    ) -> PyResult<(Self, Self, Self)> {
        let s = data::partition_by_patient(
            &self.inner,
            SplitFractions::new(train, validation, test),
            seed,
        )
        .map_err(to_py)?;
        let part = |name| {
            s.materialize(&self.inner, name)
                .map(|inner| Self { inner })
                .map_err(to_py)
        };
        Ok((part("train")?, part("validation")?, part("test")?))
    }
}

/// Generates a synthetic manifest; returns it with the ground-truth JSON.
#[pyfunction]
#[pyo3(signature = (seed = 0, n_patients = None, image_side = None, attribute_signal = None, config = None))]
fn generate(
    seed: u64,
    n_patients: Option<usize>,
    image_side: Option<usize>,
    attribute_signal: Option<&str>,
    config: Option<&str>,
) -> PyResult<(PyManifest, String)> {
    let mut cfg: GeneratorConfig = match config {
        Some(text) => toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => GeneratorConfig::default(),
    };
    cfg.seed = seed;
    if let Some(n) = n_patients {
        cfg.n_patients = n;
    }
    if let Some(d) = image_side {
        cfg.image_side = d;
    }
    if let Some(a) = attribute_signal {
        cfg.attribute_signal = serde_json::from_value(serde_json::Value::String(a.into()))
            .map_err(|e| PyValueError::new_err(format!("attribute_signal: {e}")))?;
    }
    let (inner, truth) = synthgen::generate(&cfg).map_err(to_py)?;
    let truth = serde_json::to_string(&truth).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyManifest { inner }, truth))
}

/// Blurs every image with one of the preset's two Gaussian filters; with
/// `task` and `phi`, filter assignment is correlated with that label.
#[pyfunction]
#[pyo3(signature = (manifest, preset, positive_rate = 0.25, task = None, phi = None, seed = 0))]
fn inject_filter(
    manifest: &PyManifest,
    preset: &str,
    positive_rate: f64,
    task: Option<&str>,
    phi: Option<f64>,
    seed: u64,
) -> PyResult<PyManifest> {
    let spec =
        FilterBiasSpec::preset(parse::<FilterPreset>(preset)?).with_positive_rate(positive_rate);
    let corr = match (task, phi) {
        (Some(t), Some(p)) => Some(CorrelationSpec::new(
            t,
            &spec.attribute,
            p,
            manifest.inner.len(),
            positive_rate,
        )),
        (None, None) => None,
        _ => return Err(PyValueError::new_err("task and phi must be given together")),
    };
    let inner =
        synthgen::inject_filter_bias(&manifest.inner, &spec, corr.as_ref(), seed).map_err(to_py)?;
    Ok(PyManifest { inner })
}

/// Resamples whole patients to a label-attribute phi; returns the manifest
/// and the outcome as JSON.
#[pyfunction]
#[pyo3(signature = (manifest, task, attribute, phi, budget, prevalence, seed = 0, window = skew::DEFAULT_PREVALENCE_WINDOW, tolerance = 0.05))]
#[allow(clippy::too_many_arguments)]
fn resample(
    manifest: &PyManifest,
    task: &str,
    attribute: &str,
    phi: f64,
    budget: usize,
    prevalence: f64,
    seed: u64,
    window: f64,
    tolerance: f64,
) -> PyResult<(PyManifest, String)> {
    let mut spec = CorrelationSpec::new(task, attribute, phi, budget, prevalence);
    spec.tolerance = tolerance;
    let (inner, outcome) = skew::resample(&manifest.inner, &spec, window, seed).map_err(to_py)?;
    let outcome =
        serde_json::to_string(&outcome).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((PyManifest { inner }, outcome))
}

#[pyfunction]
fn auroc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    eval::auroc(&scores, &labels).map_err(to_py)
}

fn as_patients(scores: &[f64], labels: &[bool]) -> PyResult<Vec<PatientPrediction>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, &label))| PatientPrediction {
            patient_id: format!("{i:08}"),
            score,
            label: Some(label),
            attribute: None,
        })
        .collect())
}

/// AUROC with a bootstrap percentile interval: `(point, lower, upper)`.
#[pyfunction]
#[pyo3(signature = (scores, labels, n = 1000, seed = 0))]
fn auroc_ci(scores: Vec<f64>, labels: Vec<bool>, n: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let ci =
        eval::auroc_ci(&as_patients(&scores, &labels)?, |p| p.label, n, seed).map_err(to_py)?;
    Ok((ci.point, ci.lower, ci.upper))
}

/// Share of shared bootstrap resamples where model A does not beat model B.
#[pyfunction]
#[pyo3(signature = (scores_a, scores_b, labels, n = 1000, seed = 0))]
fn paired_test(
    scores_a: Vec<f64>,
    scores_b: Vec<f64>,
    labels: Vec<bool>,
    n: usize,
    seed: u64,
) -> PyResult<f64> {
    let a = as_patients(&scores_a, &labels)?;
    let b = as_patients(&scores_b, &labels)?;
    eval::paired_test(&a, &b, n, seed).map_err(to_py)
}

/// phi coefficient of a 2x2 table; `None` when a margin is empty.
#[pyfunction]
fn phi(n11: u64, n10: u64, n01: u64, n00: u64) -> Option<f64> {
    Contingency::new(n11, n10, n01, n00).phi()
}

/// A trained encoder with its task heads.
#[pyclass(name = "Model", module = "shortcut_lab")]
pub struct PyModel {
    state: ModelState,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            state: model::load_checkpoint(&path).map_err(to_py)?,
        })
    }

    /// Randomly initialized model with one head per task.
    #[staticmethod]
    #[pyo3(signature = (input_side, widths, tasks, seed = 0))]
    fn init(
        input_side: usize,
        widths: Vec<usize>,
        tasks: Vec<String>,
        seed: u64,
    ) -> PyResult<Self> {
        let tasks: Vec<&str> = tasks.iter().map(String::as_str).collect();
        let spec = model::ModelSpec::new(input_side, widths);
        Ok(Self {
            state: ModelState::with_heads(spec, &tasks, seed).map_err(to_py)?,
        })
    }

    /// Writes a checkpoint and returns its parameter hash.
    fn save(&self, path: PathBuf) -> PyResult<String> {
        model::save_checkpoint(&self.state, &path).map_err(to_py)
    }

    #[getter]
    fn tasks(&self) -> Vec<String> {
        self.state.heads.keys().cloned().collect()
    }

    #[getter]
    fn param_hash(&self) -> String {
        self.state.param_hash()
    }

    fn param_count(&self) -> usize {
        self.state.encoder_param_count() + self.state.head_param_count()
    }

    /// Per-image probabilities of `task`, in manifest order.
    fn predict(&self, manifest: &PyManifest, task: &str) -> PyResult<Vec<f64>> {
        eval::predict_manifest(&self.state, &manifest.inner, task).map_err(to_py)
    }

    /// GradCAM map of one manifest image, normalized to [0, 1].
    fn gradcam(&self, manifest: &PyManifest, index: usize, task: &str) -> PyResult<Vec<Vec<f64>>> {
        let r = manifest
            .inner
            .records
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))?;
        let cam = model::gradcam(&self.state, &r.pixels, task).map_err(to_py)?;
        Ok(cam.rows().into_iter().map(|row| row.to_vec()).collect())
    }
}

/// Default experiment config of a kind, as config-file text.
#[pyfunction]
fn default_config(kind: &str) -> PyResult<String> {
    Ok(ExperimentConfig::for_kind(parse::<ExperimentKind>(kind)?).to_text())
}

/// Runs an experiment from config text into `out`; returns results.json text.
#[pyfunction]
fn run_experiment(config: &str, out: PathBuf) -> PyResult<String> {
    let config = ExperimentConfig::from_text(config).map_err(to_py)?;
    let results = experiment::run(&config, &out).map_err(to_py)?;
    serde_json::to_string(&results).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Merges results directories; returns the number of table rows.
#[pyfunction]
fn report(dirs: Vec<PathBuf>, out: PathBuf) -> PyResult<usize> {
    Ok(experiment::report(&dirs, &out).map_err(to_py)?.len())
}

#[pymodule]
#[pyo3(name = "shortcut_lab")]
fn shortcut_lab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifest>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(inject_filter, m)?)?;
    m.add_function(wrap_pyfunction!(resample, m)?)?;
    m.add_function(wrap_pyfunction!(auroc, m)?)?;
    m.add_function(wrap_pyfunction!(auroc_ci, m)?)?;
    m.add_function(wrap_pyfunction!(paired_test, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
