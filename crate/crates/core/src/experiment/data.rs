//! Turns an experiment config into concrete train/validation/test data for
//! each condition of one seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::data::{compute_phi, load_manifest, CorrelationSpec, Field, Manifest, SplitFractions};
use crate::error::{Error, Result};
use crate::rng::derive_seed_str;
use crate::skew::{available_cells, make_skew_pair, resample, SkewPairOptions};
use crate::synthgen::{
    generate, inject_filter_bias, FilterBiasSpec, GeneratorConfig, GroundTruth, AUX_TASKS,
};
use crate::train::{DatasetRole, RoleData, SchemeConfig, SchemeName, TrainSet};

/// Train/validation share of the source and pretraining pools.
const AUX_TRAIN_FRACTION: f64 = 0.85;

/// One condition of an experiment: the final-stage data and the test split.
#[derive(Debug, Clone)]
pub struct Condition {
    pub name: String,
    /// Numeric coordinate of the condition (source phi in the sweep).
    pub value: Option<f64>,
    /// Task the final stage learns and the test split is scored on.
    pub task: String,
    /// Attribute scored as the shortcut ground truth.
    pub attribute: String,
    pub train: Manifest,
    pub validation: Manifest,
    pub test: Manifest,
    pub source: Option<(Manifest, Manifest)>,
    pub warnings: Vec<String>,
}

/// Achieved statistics of one data part, for results.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub seed: u64,
    pub condition: String,
    pub part: String,
    pub task: String,
    pub attribute: String,
    pub n_images: usize,
    pub n_patients: usize,
    pub prevalence: Option<f64>,
    pub attribute_rate: Option<f64>,
    pub phi: Option<f64>,
    pub content_hash: String,
}

impl PartRecord {
    pub fn new(
        seed: u64,
        condition: &str,
        part: &str,
        m: &Manifest,
        task: &str,
        attribute: &str,
    ) -> Self {
        Self {
            seed,
            condition: condition.into(),
            part: part.into(),
            task: task.into(),
            attribute: attribute.into(),
            n_images: m.len(),
            n_patients: m.patient_ids().len(),
            prevalence: m.positive_rate(&Field::label(task)),
            attribute_rate: m.positive_rate(&Field::attribute(attribute)),
            phi: compute_phi(&m.records, task, attribute).ok(),
            content_hash: m.content_hash(),
        }
    }
}

/// Everything one seed of an experiment trains and tests on.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub conditions: Vec<Condition>,
    pub pretrain: Option<(Manifest, Manifest)>,
    /// Generator ground truth of the target pool (generated data only).
    pub truth: Option<GroundTruth>,
}

impl SeedData {
    pub fn records(&self, seed: u64, source_task: &str) -> Vec<PartRecord> {
        let mut out = Vec::new();
        for c in &self.conditions {
            for (part, m) in [
                ("train", &c.train),
                ("validation", &c.validation),
                ("test", &c.test),
            ] {
                out.push(PartRecord::new(
                    seed,
                    &c.name,
                    part,
                    m,
                    &c.task,
                    &c.attribute,
                ));
            }
            if let Some((train, validation)) = &c.source {
                for (part, m) in [("source_train", train), ("source_validation", validation)] {
                    out.push(PartRecord::new(
                        seed,
                        &c.name,
                        part,
                        m,
                        source_task,
                        &c.attribute,
                    ));
                }
            }
        }
        out
    }
}

pub(crate) fn needs_role(schemes: &[SchemeName], role: DatasetRole) -> bool {
    schemes.iter().any(|&s| {
        SchemeConfig::new(s).stages().any(|st| {
            st.role == role || (st.role == DatasetRole::Joint && role == DatasetRole::Source)
        })
    })
}

pub(crate) fn role_data(
    train: &Manifest,
    validation: &Manifest,
    tasks: &[&str],
) -> Result<RoleData> {
    Ok(RoleData {
        train: TrainSet::from_manifest(train, tasks)?,
        validation: TrainSet::from_manifest(validation, tasks)?,
    })
}

fn generator(
    config: &ExperimentConfig,
    seed: u64,
    role: &str,
    n_patients: usize,
) -> GeneratorConfig {
    GeneratorConfig {
        image_side: config.image_side,
        n_patients,
        attribute_signal: if config.filter_preset().is_some() {
            crate::synthgen::AttributeSignal::None
        } else {
            config.attribute_signal
        },
        noise_std: config.noise_std,
        coupling: config.coupling,
        target_prevalence: config.target_prevalence,
        source_prevalence: config.source_prevalence,
        seed: derive_seed_str(seed, role),
        id_prefix: role.chars().next().unwrap_or('x').to_string(),
        ..GeneratorConfig::default()
    }
}

fn split2(m: &Manifest, train_fraction: f64, seed: u64) -> Result<(Manifest, Manifest)> {
    let split = crate::data::partition_by_patient(
        m,
        SplitFractions::new(train_fraction, 1.0 - train_fraction, 0.0),
        seed,
    )?;
    Ok((
        split.materialize(m, "train")?,
        split.materialize(m, "validation")?,
    ))
}

fn split3(m: &Manifest, config: &ExperimentConfig, seed: u64) -> Result<[Manifest; 3]> {
    let train = 1.0 - config.validation_fraction - config.test_fraction;
    if train <= 0.0 {
        return Err(Error::InvalidFractions(
            "validation and test fractions leave no training data".into(),
        ));
    }
    let fractions = SplitFractions::new(train, config.validation_fraction, config.test_fraction);
    let split = crate::data::partition_by_patient(m, fractions, seed)?;
    Ok([
        split.materialize(m, "train")?,
        split.materialize(m, "validation")?,
        split.materialize(m, "test")?,
    ])
}

/// Share of labelled patients that are positive for `task`.
fn patient_prevalence(m: &Manifest, task: &str) -> Result<f64> {
    let (mut pos, mut n) = (0usize, 0usize);
    for (_, idx) in m.patient_groups() {
        if let Some(v) = idx.iter().find_map(|&i| m.records[i].label(task)) {
            pos += v as usize;
            n += 1;
        }
    }
    if pos == 0 || pos == n {
        return Err(Error::SingleClass(task.into()));
    }
    Ok(pos as f64 / n as f64)
}

/// Assigns the filter so that phi(task, filter) is `phi`, with as many
/// filtered patients as the task has positives.
fn correlated_filter(
    base: &FilterBiasSpec,
    m: &Manifest,
    task: &str,
    phi: f64,
    rate: Option<f64>,
    seed: u64,
) -> Result<Manifest> {
    let rate = match rate {
        Some(r) => r,
        None => patient_prevalence(m, task)?,
    };
    let spec = base.clone().with_positive_rate(rate);
    let corr = CorrelationSpec::new(task, &spec.attribute, phi, m.len(), rate);
    inject_filter_bias(m, &spec, Some(&corr), seed)
}

fn load_target_pool(config: &ExperimentConfig, path: &Path) -> Result<Manifest> {
    let root = match &config.image_root {
        Some(r) => r.clone(),
        None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let m = load_manifest(path, &root)?;
    match m.image_side() {
        Some(side) if side == config.image_side => Ok(m),
        Some(side) => Err(Error::Config(format!(
            "manifest images are {side} pixels, config expects {}",
            config.image_side
        ))),
        None => Err(Error::MissingDataset(format!(
            "{} has no records",
            path.display()
        ))),
    }
}

/// Builds the data of every condition for one seed.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<SeedData> {
    let schemes = config.schemes();
    let (pool, truth) = match &config.manifest {
        Some(path) => (load_target_pool(config, path)?, None),
        None => {
            let (m, t) = generate(&generator(config, seed, "target", config.target_patients))?;
            (m, Some(t))
        }
    };
    let filter = config.filter_preset().map(|p| {
        let mut spec = FilterBiasSpec::preset(p);
        spec.sigma_scale = config.sigma_scale;
        spec
    });
    let attribute = match (&filter, &config.attribute) {
        (Some(f), _) => f.attribute.clone(),
        (None, Some(a)) => a.clone(),
        (None, None) => config.attribute_signal.attribute_name().to_string(),
    };

    let source_pool = if needs_role(&schemes, DatasetRole::Source) {
        Some(generate(&generator(config, seed, "source", config.source_patients))?.0)
    } else {
        None
    };
    let pretrain = if needs_role(&schemes, DatasetRole::Pretrain) {
        let (m, _) = generate(&generator(
            config,
            seed,
            "pretrain",
            config.pretrain_patients,
        ))?;
        let m = m.restrict_tasks(&AUX_TASKS);
        Some(split2(
            &m,
            AUX_TRAIN_FRACTION,
            derive_seed_str(seed, "pretrain-split"),
        )?)
    } else {
        None
    };
    let source_with = |phi: Option<f64>| -> Result<Option<(Manifest, Manifest)>> {
        let Some(pool) = &source_pool else {
            return Ok(None);
        };
        let pool = match (&filter, phi) {
            (Some(f), Some(phi)) => correlated_filter(
                f,
                pool,
                &config.source_task,
                phi,
                Some(config.source_filter_rate),
                derive_seed_str(seed, &format!("source-filter{phi}")),
            )?,
            _ => pool.clone(),
        };
        Some(split2(
            &pool,
            AUX_TRAIN_FRACTION,
            derive_seed_str(seed, "source-split"),
        ))
        .transpose()
    };

    let target_task = config.target_task.clone();
    let mut conditions = Vec::new();
    match config.kind {
        ExperimentKind::AttributeProbe | ExperimentKind::FilterLearnability => {
            let presets: Vec<Option<FilterBiasSpec>> =
                if config.kind == ExperimentKind::FilterLearnability {
                    config
                        .presets
                        .iter()
                        .map(|&p| {
                            let mut spec = FilterBiasSpec::preset(p);
                            spec.sigma_scale = config.sigma_scale;
                            Some(spec)
                        })
                        .collect()
                } else {
                    vec![filter.clone()]
                };
            for (i, spec) in presets.into_iter().enumerate() {
                let (name, m) = match &spec {
                    Some(s) => {
                        let s = s.clone().with_positive_rate(config.filter_rate);
                        let name = if config.kind == ExperimentKind::FilterLearnability {
                            config.presets[i].to_string()
                        } else {
                            "probe".to_string()
                        };
                        (
                            name,
                            inject_filter_bias(
                                &pool,
                                &s,
                                None,
                                derive_seed_str(seed, "probe-filter"),
                            )?,
                        )
                    }
                    None => ("probe".to_string(), pool.clone()),
                };
                let m = m.promote_attribute(&attribute);
                let [train, validation, test] =
                    split3(&m, config, derive_seed_str(seed, "target-split"))?;
                conditions.push(Condition {
                    name,
                    value: None,
                    task: attribute.clone(),
                    attribute: target_task.clone(),
                    train,
                    validation,
                    test,
                    source: None,
                    warnings: vec![],
                });
            }
        }
        kind => {
            let mut wanted: Vec<(String, f64, Option<f64>)> =
                vec![("skewed".into(), config.target_phi, None)];
            if kind == ExperimentKind::SkewVsUnskew || config.include_unskewed {
                wanted.push(("unskewed".into(), 0.0, None));
            }
            if kind == ExperimentKind::SourceSkewSweep {
                wanted = config
                    .sweep_points()
                    .into_iter()
                    .map(|p| (format!("source_phi={p:.1}"), config.target_phi, Some(p)))
                    .collect();
            }
            let sources_fixed = if kind == ExperimentKind::SourceSkewSweep {
                None
            } else {
                Some(source_with(filter.as_ref().map(|_| config.source_phi))?)
            };
            let built = match &filter {
                Some(f) => {
                    let [train, validation, test] =
                        split3(&pool, config, derive_seed_str(seed, "target-split"))?;
                    let test = correlated_filter(
                        f,
                        &test,
                        &target_task,
                        0.0,
                        None,
                        derive_seed_str(seed, "test-filter"),
                    )?;
                    let mut out = Vec::new();
                    for (_, phi, _) in &wanted {
                        let tag = format!("{phi}");
                        out.push((
                            correlated_filter(
                                f,
                                &train,
                                &target_task,
                                *phi,
                                None,
                                derive_seed_str(seed, &format!("train-filter{tag}")),
                            )?,
                            correlated_filter(
                                f,
                                &validation,
                                &target_task,
                                *phi,
                                None,
                                derive_seed_str(seed, &format!("val-filter{tag}")),
                            )?,
                            test.clone(),
                            vec![],
                        ));
                    }
                    out
                }
                None => rendered_conditions(config, &pool, &attribute, &wanted, seed)?,
            };
            for ((name, _, source_phi), (train, validation, test, warnings)) in
                wanted.into_iter().zip(built)
            {
                let source = match &sources_fixed {
                    Some(s) => s.clone(),
                    None => source_with(source_phi)?,
                };
                conditions.push(Condition {
                    name,
                    value: source_phi,
                    task: target_task.clone(),
                    attribute: attribute.clone(),
                    train,
                    validation,
                    test,
                    source,
                    warnings,
                });
            }
        }
    }
    Ok(SeedData {
        conditions,
        pretrain,
        truth,
    })
}

type Built = (Manifest, Manifest, Manifest, Vec<String>);

/// Skewed and unskewed data for an attribute already present in the pool.
fn rendered_conditions(
    config: &ExperimentConfig,
    pool: &Manifest,
    attribute: &str,
    wanted: &[(String, f64, Option<f64>)],
    seed: u64,
) -> Result<Vec<Built>> {
    if !pool.declared_attributes.iter().any(|a| a == attribute) {
        return Err(Error::Config(format!(
            "attribute '{attribute}' is not in the manifest"
        )));
    }
    let task = config.target_task.as_str();
    let split = crate::data::partition_by_patient(
        pool,
        SplitFractions::new(1.0 - config.test_fraction, 0.0, config.test_fraction),
        derive_seed_str(seed, "target-split"),
    )?;
    let rest = split.materialize(pool, "train")?;
    let test_part = split.materialize(pool, "test")?;
    let mut spec = CorrelationSpec::new(
        task,
        attribute,
        0.0,
        available_cells(&test_part, task, attribute).total() as usize,
        config.target_prevalence,
    );
    spec.tolerance = config.tolerance;
    let (test, _) = resample(
        &test_part,
        &spec,
        config.prevalence_window,
        derive_seed_str(seed, "test-resample"),
    )?;
    let options = SkewPairOptions {
        train_fraction: 1.0 - config.validation_fraction / (1.0 - config.test_fraction),
        prevalence_window: config.prevalence_window,
        tolerance: config.tolerance,
    };
    let budget = available_cells(&rest, task, attribute).total() as usize;
    let pair = make_skew_pair(
        &rest,
        task,
        attribute,
        config.target_prevalence,
        budget,
        &options,
        derive_seed_str(seed, "skew-pair"),
    )?;
    Ok(wanted
        .iter()
        .map(|(_, phi, _)| {
            let part = if *phi == 0.0 {
                &pair.unskewed
            } else {
                &pair.skewed
            };
            (
                part.train.clone(),
                part.validation.clone(),
                test.clone(),
                pair.warnings.clone(),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{AttributeSignal, FilterPreset};

    fn small(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            image_side: 16,
            widths: vec![4, 4],
            target_patients: 240,
            source_patients: 120,
            pretrain_patients: 80,
            seeds: vec![0],
            ..ExperimentConfig::for_kind(kind)
        }
    }

    #[test]
    fn filter_skew_hits_requested_phi() {
        let mut c = small(ExperimentKind::SkewVsUnskew);
        c.preset = Some(FilterPreset::Easy);
        let d = prepare(&c, 3).unwrap();
        assert_eq!(d.conditions.len(), 2);
        let records = d.records(3, &c.source_task);
        let phi = |cond: &str, part: &str| {
            records
                .iter()
                .find(|r| r.condition == cond && r.part == part)
                .unwrap()
                .phi
                .unwrap()
        };
        assert!((phi("skewed", "train") - 1.0).abs() < 1e-12);
        assert!((phi("skewed", "validation") - 1.0).abs() < 1e-12);
        assert!(phi("unskewed", "train").abs() <= 0.05);
        assert!(phi("skewed", "test").abs() <= 0.05);
        // the two conditions differ only in which images were filtered
        assert_eq!(
            d.conditions[0].train.patient_ids(),
            d.conditions[1].train.patient_ids()
        );
        assert!(d.pretrain.is_none());
    }

    #[test]
    fn sweep_builds_correlated_sources() {
        let mut c = small(ExperimentKind::SourceSkewSweep);
        c.sweep_step = 1.0;
        let d = prepare(&c, 1).unwrap();
        let names: Vec<_> = d.conditions.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(
            names,
            ["source_phi=-1.0", "source_phi=0.0", "source_phi=1.0"]
        );
        for cond in &d.conditions {
            let (train, _) = cond.source.as_ref().unwrap();
            let phi = compute_phi(&train.records, &c.source_task, "filter").unwrap();
            assert!(
                (phi - cond.value.unwrap()).abs() <= 0.05,
                "{} got {phi}",
                cond.name
            );
        }
        let (pt, _) = d.pretrain.as_ref().unwrap();
        assert_eq!(pt.declared_tasks.len(), AUX_TASKS.len());
    }

    #[test]
    fn rendered_attribute_pair_is_matched() {
        let mut c = small(ExperimentKind::SkewVsUnskew);
        c.attribute_signal = AttributeSignal::Marker;
        c.target_patients = 600;
        let d = prepare(&c, 2).unwrap();
        let (s, u) = (&d.conditions[0], &d.conditions[1]);
        assert_eq!(s.attribute, "pacemaker");
        assert!(compute_phi(&s.train.records, "chf", "pacemaker").unwrap() >= 1.0 - c.tolerance);
        assert!(
            compute_phi(&u.train.records, "chf", "pacemaker")
                .unwrap()
                .abs()
                <= 0.05
        );
        assert!(
            compute_phi(&s.test.records, "chf", "pacemaker")
                .unwrap()
                .abs()
                <= 0.05
        );
        assert!((s.train.len() as i64 - u.train.len() as i64).abs() <= 2);
    }

    #[test]
    fn probe_predicts_the_attribute() {
        let c = small(ExperimentKind::FilterLearnability);
        let d = prepare(&c, 0).unwrap();
        assert_eq!(d.conditions.len(), 3);
        for cond in &d.conditions {
            assert_eq!(cond.task, "filter");
            let rate = cond.train.positive_rate(&Field::label("filter")).unwrap();
            assert!((rate - c.filter_rate).abs() < 0.1);
        }
    }
}
