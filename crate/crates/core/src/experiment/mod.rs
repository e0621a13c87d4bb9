//! Declarative experiments: data preparation, scheme training, evaluation
//! and the artifacts written for each run.

mod config;
mod data;
mod plots;
mod report;
mod results;

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, ExperimentKind};
pub use data::{prepare, Condition, PartRecord, SeedData};
pub use plots::{bar_chart, line_chart, write_overlay, Bar, Line};
pub use report::{
    report, summarize, write_figures, write_rows, SummaryRow, TableRow, SIGNIFICANCE,
};
pub use results::{
    ErrorRecord, LocalizationRecord, PairedTestRecord, Provenance, Results, RunRecord,
    StageSummary, ERROR_FILE, RESULTS_FILE, RESULTS_SCHEMA_VERSION,
};

use crate::error::Result;
use crate::eval::{paired_test, shortcut_report, PredictionSet};
use crate::model::{gradcam, save_checkpoint, ModelState};
use crate::rng::derive_seed_str;
use crate::synthgen::{GroundTruth, AUX_TASKS};
use crate::train::{
    run_scheme, DatasetRole, ExecutedStage, SchemeCache, SchemeConfig, SchemeData, SchemeName,
};

/// Path-safe form of a condition or scheme name.
fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Runs an experiment into `out`. On failure a structured `error.json` is
/// written there before the error is returned.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<Results> {
    fs::create_dir_all(out)?;
    let error_path = out.join(ERROR_FILE);
    if error_path.exists() {
        fs::remove_file(&error_path)?;
    }
    execute(config, out).inspect_err(|e| {
        let record = ErrorRecord::from_error(e);
        if let Ok(text) = serde_json::to_string_pretty(&record) {
            let _ = fs::write(&error_path, text + "\n");
        }
    })
}

#[derive(Serialize)]
struct CurveRow<'a> {
    stage: &'a str,
    epoch: usize,
    train_loss: f64,
    train_auroc: Option<f64>,
    val_loss: f64,
    val_auroc: Option<f64>,
}

#[derive(Serialize)]
struct GridRow<'a> {
    stage: &'a str,
    learning_rate: f64,
    momentum: f64,
    val_auroc: Option<f64>,
    selected: bool,
}

fn write_stage_tables(dir: &Path, stages: &[ExecutedStage]) -> Result<()> {
    let mut curves = Vec::new();
    let mut grid = Vec::new();
    for stage in stages {
        let name = stage.outcome.name.as_str();
        curves.extend(stage.outcome.curves.iter().map(|e| CurveRow {
            stage: name,
            epoch: e.epoch,
            train_loss: e.train_loss,
            train_auroc: e.train_auroc,
            val_loss: e.val_loss,
            val_auroc: e.val_auroc,
        }));
        if let Some(g) = &stage.grid {
            grid.extend(
                g.configs
                    .iter()
                    .zip(&g.val_metric)
                    .enumerate()
                    .map(|(i, (c, m))| GridRow {
                        stage: name,
                        learning_rate: c.learning_rate,
                        momentum: c.momentum,
                        val_auroc: *m,
                        selected: i == g.best,
                    }),
            );
        }
    }
    write_rows(&dir.join("curves.csv"), &curves)?;
    write_rows(&dir.join("grid.csv"), &grid)
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Scheme pairs compared within a condition, with the row that reports them.
fn within_condition_pairs(schemes: &[SchemeName]) -> Vec<(SchemeName, SchemeName, bool)> {
    if schemes.contains(&SchemeName::AllLayers) {
        schemes
            .iter()
            .filter(|&&s| s != SchemeName::AllLayers)
            .map(|&s| (s, SchemeName::AllLayers, false))
            .collect()
    } else {
        schemes
            .iter()
            .skip(1)
            .map(|&s| (schemes[0], s, true))
            .collect()
    }
}

/// GradCAM localization over test images whose attribute region is known.
fn localize(
    state: &ModelState,
    condition: &Condition,
    truth: &GroundTruth,
    overlays: Option<(&Path, usize)>,
) -> Result<Option<(usize, f64, f64, f64)>> {
    let mut hits = 0usize;
    let (mut inside_sum, mut outside_sum, mut n) = (0.0, 0.0, 0usize);
    for record in &condition.test.records {
        let Some(b @ [top, left, bottom, right]) = truth.marker_box(&record.image_id) else {
            continue;
        };
        let cam = gradcam(state, &record.pixels, &condition.task)?;
        let (mut inside, mut outside, mut n_in) = (0.0, 0.0, 0usize);
        for ((y, x), &v) in cam.indexed_iter() {
            if (top..bottom).contains(&y) && (left..right).contains(&x) {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
            }
        }
        let n_out = cam.len() - n_in;
        if n_in == 0 || n_out == 0 {
            continue;
        }
        let (inside, outside) = (inside / n_in as f64, outside / n_out as f64);
        hits += (inside > outside) as usize;
        inside_sum += inside;
        outside_sum += outside;
        if let Some((dir, limit)) = overlays {
            if n < limit {
                write_overlay(
                    &dir.join(format!("{}.png", slug(&record.image_id))),
                    &record.pixels,
                    &cam,
                    Some(b),
                    0.45,
                )?;
            }
        }
        n += 1;
    }
    Ok((n > 0).then(|| {
        (
            n,
            hits as f64 / n as f64,
            inside_sum / n as f64,
            outside_sum / n as f64,
        )
    }))
}

fn execute(config: &ExperimentConfig, out: &Path) -> Result<Results> {
    config.validate()?;
    let mut results = Results::new(config.clone());
    let notes = &mut results.provenance.notes;
    notes.push("no pretrained weights: all_layers starts from random initialization".into());
    if config.filter_preset().is_some() || config.kind == ExperimentKind::FilterLearnability {
        notes.push("Gaussian filter applied after preprocessing".into());
    }
    if let Some(path) = &config.manifest {
        results
            .provenance
            .manifests
            .insert(format!("input:{}", path.display()), file_hash(path)?);
    }
    let schemes = config.schemes();
    for &seed in &config.seeds {
        log::info!("{}: preparing data for seed {seed}", config.kind);
        let data = prepare(config, seed)?;
        for part in data.records(seed, &config.source_task) {
            results.provenance.manifests.insert(
                format!("seed{seed}/{}/{}", part.condition, part.part),
                part.content_hash.clone(),
            );
            results.resampling.push(part);
        }
        let pretrain = match &data.pretrain {
            Some((train, validation)) => {
                for (part, m) in [
                    ("pretrain_train", train),
                    ("pretrain_validation", validation),
                ] {
                    results
                        .provenance
                        .manifests
                        .insert(format!("seed{seed}/{part}"), m.content_hash());
                }
                Some(data::role_data(train, validation, &AUX_TASKS)?)
            }
            None => None,
        };
        let mut cache = SchemeCache::default();
        let mut predictions: Vec<(String, SchemeName, PredictionSet)> = Vec::new();
        let boot_seed = derive_seed_str(seed, "bootstrap");
        for condition in &data.conditions {
            results.warnings.extend(
                condition
                    .warnings
                    .iter()
                    .map(|w| format!("seed {seed}, {}: {w}", condition.name)),
            );
            let source = match (
                &condition.source,
                data::needs_role(&schemes, DatasetRole::Source),
            ) {
                (Some((train, validation)), true) => {
                    Some(data::role_data(train, validation, &[&config.source_task])?)
                }
                _ => None,
            };
            let scheme_data = SchemeData {
                pretrain: pretrain.clone(),
                source,
                target: Some(data::role_data(
                    &condition.train,
                    &condition.validation,
                    &[&condition.task],
                )?),
            };
            for &scheme in &schemes {
                log::info!("seed {seed}, {}: training {scheme}", condition.name);
                let mut run_config = config.scheme_run_config(derive_seed_str(seed, "train"));
                run_config.target_task = condition.task.clone();
                let run = run_scheme(
                    &SchemeConfig::new(scheme),
                    &scheme_data,
                    &run_config,
                    Some(&mut cache),
                )?;
                let (report, set) = shortcut_report(
                    &run.state,
                    &condition.test,
                    &condition.task,
                    &condition.attribute,
                    config.n_bootstrap,
                    boot_seed,
                )?;

                let rel = format!(
                    "runs/{}/{}/seed{seed}",
                    slug(&condition.name),
                    slug(&scheme.to_string())
                );
                let dir = out.join(&rel);
                fs::create_dir_all(&dir)?;
                write_stage_tables(&dir, &run.stages)?;
                let checkpoint_path = format!("{rel}/checkpoint.json");
                let checkpoint_hash = save_checkpoint(&run.state, &out.join(&checkpoint_path))?;
                results
                    .provenance
                    .checkpoints
                    .insert(checkpoint_path.clone(), checkpoint_hash.clone());

                let fallback = (config.source_learning_rate, config.source_momentum);
                results.runs.push(RunRecord {
                    scheme: scheme.to_string(),
                    seed,
                    condition: condition.name.clone(),
                    condition_value: condition.value,
                    task: condition.task.clone(),
                    attribute: condition.attribute.clone(),
                    auroc_target: report.auroc_target.point,
                    auroc_target_ci: [report.auroc_target.lower, report.auroc_target.upper],
                    auroc_attribute: report.auroc_attribute.as_ref().map(|m| m.point),
                    auroc_attribute_ci: report.auroc_attribute.as_ref().map(|m| [m.lower, m.upper]),
                    attribute_note: report.attribute_note.clone(),
                    n_test_patients: report.n_patients,
                    test_phi: report.test_phi,
                    curves_path: format!("{rel}/curves.csv"),
                    grid_path: format!("{rel}/grid.csv"),
                    checkpoint_path,
                    checkpoint_hash,
                    stages: run
                        .stages
                        .iter()
                        .map(|s| {
                            let fb = if s.role == DatasetRole::Pretrain {
                                (config.pretrain_learning_rate, 0.0)
                            } else {
                                fallback
                            };
                            StageSummary::from_stage(s, fb)
                        })
                        .collect(),
                });

                if config.gradcam && config.kind == ExperimentKind::AttributeProbe {
                    if let Some(truth) = &data.truth {
                        let overlay_dir = out.join(format!("gradcam/seed{seed}"));
                        fs::create_dir_all(&overlay_dir)?;
                        if let Some((n, fraction, inside, outside)) = localize(
                            &run.state,
                            condition,
                            truth,
                            Some((&overlay_dir, config.gradcam_images)),
                        )? {
                            results.localization.push(LocalizationRecord {
                                seed,
                                condition: condition.name.clone(),
                                scheme: scheme.to_string(),
                                n_images: n,
                                fraction_inside: fraction,
                                mean_inside: inside,
                                mean_outside: outside,
                            });
                        }
                    }
                }
                predictions.push((condition.name.clone(), scheme, set));
            }
            let find = |c: &str, s: SchemeName| {
                predictions
                    .iter()
                    .find(|p| p.0 == c && p.1 == s)
                    .map(|p| &p.2)
            };
            for (a, b, under_b) in within_condition_pairs(&schemes) {
                let (Some(pa), Some(pb)) = (find(&condition.name, a), find(&condition.name, b))
                else {
                    continue;
                };
                results.paired_tests.push(PairedTestRecord {
                    seed,
                    condition_a: condition.name.clone(),
                    scheme_a: a.to_string(),
                    condition_b: condition.name.clone(),
                    scheme_b: b.to_string(),
                    p_value: paired_test(
                        &pa.patients,
                        &pb.patients,
                        config.n_bootstrap,
                        boot_seed,
                    )?,
                    listed_under_b: under_b,
                });
            }
        }
        if config.kind == ExperimentKind::SkewVsUnskew || config.include_unskewed {
            for &scheme in &schemes {
                let find = |c: &str| {
                    predictions
                        .iter()
                        .find(|p| p.0 == c && p.1 == scheme)
                        .map(|p| &p.2)
                };
                if let (Some(u), Some(s)) = (find("unskewed"), find("skewed")) {
                    results.paired_tests.push(PairedTestRecord {
                        seed,
                        condition_a: "unskewed".into(),
                        scheme_a: scheme.to_string(),
                        condition_b: "skewed".into(),
                        scheme_b: scheme.to_string(),
                        p_value: paired_test(
                            &u.patients,
                            &s.patients,
                            config.n_bootstrap,
                            boot_seed,
                        )?,
                        listed_under_b: false,
                    });
                }
            }
        }
    }

    let table: Vec<TableRow> = results.runs.iter().map(TableRow::from).collect();
    write_rows(&out.join("table.csv"), &table)?;
    let summary = summarize(&results, config.kind.name());
    write_rows(&out.join("summary.csv"), &summary)?;
    write_figures(&out.join("figures"), &summary, |r| r.condition.clone())?;
    results.write(out)?;
    Ok(results)
}
