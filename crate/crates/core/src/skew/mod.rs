//! Resampling a dataset to a requested label–attribute correlation while
//! holding its size and prevalence near targets.

mod plan;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Contingency, CorrelationSpec, Field, Manifest, SplitFractions};
use crate::error::{Error, Result};
use crate::rng::rng_for_str;

pub use plan::{plan_cells, ResamplePlan, DEFAULT_PREVALENCE_WINDOW};

/// Cell counts (records with both values present) of `task` × `attribute`.
pub fn available_cells(manifest: &Manifest, task: &str, attribute: &str) -> Contingency {
    Contingency::tabulate(
        &manifest.records,
        &Field::label(task),
        &Field::attribute(attribute),
    )
}

/// What `execute_plan` actually delivered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleOutcome {
    pub plan: ResamplePlan,
    pub achieved_cells: Contingency,
    pub achieved_phi: Option<f64>,
    pub achieved_prevalence: f64,
    /// Largest of the phi and prevalence gaps between plan and outcome.
    pub deviation: f64,
    pub n_patients: usize,
}

/// Draws whole patients, in seeded random order, into the planned cells.
///
/// Records missing either value are never included. A patient is taken only
/// if all of its eligible records fit in the remaining cell capacity, so
/// cells can end slightly under target when patients carry several images.
pub fn execute_plan(
    manifest: &Manifest,
    task: &str,
    attribute: &str,
    plan: &ResamplePlan,
    tolerance: f64,
    seed: u64,
) -> Result<(Manifest, ResampleOutcome)> {
    let mut groups = manifest.patient_groups();
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    groups.shuffle(&mut rng_for_str(seed, "execute-plan"));

    let target = plan.cells;
    let mut filled = Contingency::default();
    let mut chosen = Vec::new();
    let mut n_patients = 0;
    for (_, idx) in &groups {
        let eligible: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| {
                let r = &manifest.records[i];
                r.label(task).is_some() && r.attribute(attribute).is_some()
            })
            .collect();
        if eligible.is_empty() {
            continue;
        }
        let mut trial = filled;
        for &i in &eligible {
            let r = &manifest.records[i];
            trial.add(r.label(task).unwrap(), r.attribute(attribute).unwrap());
        }
        if trial.n11 <= target.n11
            && trial.n10 <= target.n10
            && trial.n01 <= target.n01
            && trial.n00 <= target.n00
        {
            filled = trial;
            chosen.extend(eligible);
            n_patients += 1;
        }
    }
    chosen.sort_unstable();
    let mut out = Manifest::new(
        manifest.declared_tasks.clone(),
        manifest.declared_attributes.clone(),
    );
    out.records = chosen
        .into_iter()
        .map(|i| manifest.records[i].clone())
        .collect();

    let achieved_phi = filled.phi();
    let total = filled.total().max(1) as f64;
    let achieved_prevalence = filled.row_positive() as f64 / total;
    let phi_gap = match (achieved_phi, plan.achieved_phi) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => f64::INFINITY,
    };
    let deviation = phi_gap.max((achieved_prevalence - plan.achieved_prevalence).abs());
    if deviation > tolerance {
        return Err(Error::ResampleDeviation {
            deviation,
            tolerance,
        });
    }
    Ok((
        out,
        ResampleOutcome {
            plan: plan.clone(),
            achieved_cells: filled,
            achieved_phi,
            achieved_prevalence,
            deviation,
            n_patients,
        },
    ))
}

/// Plans against the manifest's availability and executes in one call.
pub fn resample(
    manifest: &Manifest,
    spec: &CorrelationSpec,
    window: f64,
    seed: u64,
) -> Result<(Manifest, ResampleOutcome)> {
    spec.validate()?;
    let available = available_cells(manifest, &spec.task, &spec.attribute);
    let plan = plan_cells(&available, spec, window)?;
    execute_plan(
        manifest,
        &spec.task,
        &spec.attribute,
        &plan,
        spec.tolerance,
        seed,
    )
}

/// A train/validation pair drawn with the same correlation.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewedSplit {
    pub train: Manifest,
    pub validation: Manifest,
    pub outcomes: BTreeMap<String, ResampleOutcome>,
}

/// Matched skewed (phi = 1) and unskewed (phi ≈ 0) training data.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewPair {
    pub skewed: SkewedSplit,
    pub unskewed: SkewedSplit,
    pub warnings: Vec<String>,
}

/// Options for [`make_skew_pair`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewPairOptions {
    /// Train share of the pool; the rest goes to validation.
    pub train_fraction: f64,
    pub prevalence_window: f64,
    pub tolerance: f64,
}

impl Default for SkewPairOptions {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            prevalence_window: DEFAULT_PREVALENCE_WINDOW,
            tolerance: 0.05,
        }
    }
}

/// Builds skewed and unskewed train/validation sets from a pool that must
/// already exclude test patients.
///
/// The pool is first split by patient into train and validation parts; each
/// part is then resampled to phi = 1 and, with the skewed size as budget, to
/// phi = 0 so the two conditions have matched size and prevalence.
pub fn make_skew_pair(
    pool: &Manifest,
    task: &str,
    attribute: &str,
    prevalence: f64,
    budget: usize,
    options: &SkewPairOptions,
    seed: u64,
) -> Result<SkewPair> {
    let f = options.train_fraction;
    let fractions = SplitFractions::new(f, 1.0 - f, 0.0);
    let split = crate::data::partition_by_patient(pool, fractions, seed)?;
    let parts = [
        ("train", split.materialize(pool, "train")?),
        ("validation", split.materialize(pool, "validation")?),
    ];
    let train_budget = (budget as f64 * f).round() as usize;
    let budgets = [train_budget, budget - train_budget];

    let mut warnings = Vec::new();
    let mut skewed = BTreeMap::new();
    let mut unskewed = BTreeMap::new();
    let mut outcomes_s = BTreeMap::new();
    let mut outcomes_u = BTreeMap::new();
    for ((name, part), part_budget) in parts.iter().zip(budgets) {
        let available = available_cells(part, task, attribute).total() as usize;
        if part_budget > available {
            warnings.push(format!(
                "{name}: budget {part_budget} exceeds {available} eligible records; size capped"
            ));
        }
        let mut spec = CorrelationSpec::new(task, attribute, 1.0, part_budget.max(4), prevalence);
        spec.tolerance = options.tolerance;
        let (s, out_s) = resample(part, &spec, options.prevalence_window, seed ^ 0x5)?;
        spec.target_phi = 0.0;
        spec.size_budget = s.len().max(4);
        let (u, out_u) = resample(part, &spec, options.prevalence_window, seed ^ 0xA)?;
        skewed.insert(*name, s);
        unskewed.insert(*name, u);
        outcomes_s.insert(name.to_string(), out_s);
        outcomes_u.insert(name.to_string(), out_u);
    }
    let take = |m: &mut BTreeMap<&str, Manifest>, o| SkewedSplit {
        train: m.remove("train").unwrap(),
        validation: m.remove("validation").unwrap(),
        outcomes: o,
    };
    Ok(SkewPair {
        skewed: take(&mut skewed, outcomes_s),
        unskewed: take(&mut unskewed, outcomes_u),
        warnings,
    })
}
